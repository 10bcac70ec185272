use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scene::{simulate_scene, SpeckleSceneConfig};
use crate::dsp::{read_wav, write_wav};
use crate::events::{write_events, EventFormat};
use crate::kv::{Echo, KvConfig};
use crate::{Error, Result};

/// Batch simulation settings. The scene supplies speckle layout, sensor and
/// event model; directions and gains are redrawn for every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub scene: SpeckleSceneConfig,
    pub repetitions: usize,
    pub master_seed: u64,
    pub gain_range: (f64, f64),
    /// Clips are scaled so that `max |q| = audio_peak` before driving.
    pub audio_peak: f64,
    /// Seconds taken from the start of every clip; whole clip when `None`.
    pub duration_s: Option<f64>,
    pub event_format: EventFormat,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scene: SpeckleSceneConfig::default(),
            repetitions: 1,
            master_seed: 0,
            gain_range: (0.5, 2.0),
            audio_peak: 0.5,
            duration_s: None,
            event_format: EventFormat::Binary,
        }
    }
}

const DATASET_KEYS: &[&str] = &["repetitions", "gain_min", "gain_max", "audio_peak", "duration", "event_format"];

impl DatasetConfig {
    /// Dataset keys plus every scene key in one file; `seed` is the master seed.
    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        let scene = SpeckleSceneConfig::from_kv(&cfg.subset(|k| !DATASET_KEYS.contains(&k)))?;
        let d = Self::default();
        let format: Option<String> = cfg.get("event_format")?;
        let out = Self {
            master_seed: scene.rng_seed,
            scene,
            repetitions: cfg.get_or("repetitions", d.repetitions)?,
            gain_range: (cfg.get_or("gain_min", d.gain_range.0)?, cfg.get_or("gain_max", d.gain_range.1)?),
            audio_peak: cfg.get_or("audio_peak", d.audio_peak)?,
            duration_s: cfg.get("duration")?,
            event_format: match format {
                Some(f) => f.parse()?,
                None => d.event_format,
            },
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.repetitions == 0 {
            return Err(Error::arg("repetitions must be at least 1"));
        }
        let (lo, hi) = self.gain_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::arg("gain range must satisfy 0 < min <= max"));
        }
        if !(self.audio_peak > 0.0) {
            return Err(Error::arg("audio_peak must be positive"));
        }
        Ok(())
    }

    pub fn echo(&self) -> Echo {
        let mut e = self.scene.echo();
        e.set("repetitions", self.repetitions)
            .set("gain_min", self.gain_range.0)
            .set("gain_max", self.gain_range.1)
            .set("audio_peak", self.audio_peak)
            .set("event_format", if self.event_format == EventFormat::Binary { "binary" } else { "text" });
        if let Some(d) = self.duration_s {
            e.set("duration", d);
        }
        e
    }
}

/// One manifest line. Paths are resolved against the manifest directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub seed: u64,
    pub direction: [f64; 2],
    pub gain: f64,
    pub events_path: PathBuf,
    pub audio_path: PathBuf,
}

impl ManifestRecord {
    fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.id,
            self.seed,
            self.direction[0],
            self.direction[1],
            self.gain,
            self.events_path.display(),
            self.audio_path.display()
        )
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: &str| Error::Decode { location: format!("{}:{}", path.display(), idx + 1), message: m.into() };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(err("expected 7 tab-separated fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err("invalid number"));
        out.push(ManifestRecord {
            id: f[0].to_string(),
            seed: f[1].parse().map_err(|_| err("invalid seed"))?,
            direction: [num(f[2])?, num(f[3])?],
            gain: num(f[4])?,
            events_path: base.join(f[5]),
            audio_path: base.join(f[6]),
        });
    }
    Ok(out)
}

fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut clips: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    clips.sort();
    Ok(clips)
}

/// Simulates every clip `repetitions` times with freshly drawn directions
/// (uniform on the circle) and gains (uniform in `gain_range`), one draw per
/// speckle. Writes events, frame-rate ground truth WAV and a scene sidecar per
/// sample plus `manifest.tsv`, whose direction and gain columns describe the
/// first speckle.
pub fn make_dataset(config: &DatasetConfig, audio_dir: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    config.validate()?;
    let (audio_dir, out_dir) = (audio_dir.as_ref(), out_dir.as_ref());
    let clips = list_wavs(audio_dir)?;
    if clips.is_empty() {
        return Err(Error::Empty(format!("no WAV files in {}", audio_dir.display())));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut master = ChaCha8Rng::seed_from_u64(config.master_seed);
    let ext = if config.event_format == EventFormat::Binary { "evs" } else { "txt" };
    let mut lines = Vec::new();
    for clip_path in &clips {
        let mut audio = read_wav(clip_path)?;
        let peak = audio.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            let k = config.audio_peak / peak;
            audio.samples.iter_mut().for_each(|v| *v *= k);
        }
        if audio.sample_rate < config.scene.frame_rate {
            audio = audio.resample_linear(config.scene.frame_rate)?;
        }
        let duration = config.duration_s.unwrap_or(audio.duration_s()).min(audio.duration_s());
        let stem = clip_path.file_stem().and_then(|s| s.to_str()).unwrap_or("clip").to_string();
        for rep in 0..config.repetitions {
            let seed: u64 = master.random();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut scene = config.scene.clone();
            scene.rng_seed = seed;
            for s in &mut scene.speckles {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let (lo, hi) = config.gain_range;
                s.track.direction = [angle.cos(), angle.sin()];
                s.track.gain = if hi > lo { rng.random_range(lo..hi) } else { lo };
            }
            let (events, truth) = simulate_scene(&scene, &audio, duration)?;
            let id = format!("{stem}_r{rep}");
            let ev_name = format!("{id}.{ext}");
            let wav_name = format!("{id}.wav");
            write_events(&events, out_dir.join(&ev_name), config.event_format)?;
            write_wav(out_dir.join(&wav_name), &truth)?;
            scene.echo().write(out_dir.join(format!("{id}.scene.txt")))?;
            let first = &scene.speckles[0].track;
            lines.push(
                ManifestRecord {
                    id,
                    seed,
                    direction: first.direction,
                    gain: first.gain,
                    events_path: ev_name.into(),
                    audio_path: wav_name.into(),
                }
                .to_line(),
            );
        }
    }
    let manifest = out_dir.join("manifest.tsv");
    let mut text = lines.join("\n");
    text.push('\n');
    std::fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Speckle, VibrationTrack};
    use crate::AudioSignal;

    fn small_config() -> DatasetConfig {
        let mut scene = SpeckleSceneConfig { width: 16, height: 16, ..Default::default() };
        scene.speckles[0].center = [8.0, 8.0];
        DatasetConfig { scene, repetitions: 3, master_seed: 7, duration_s: Some(0.02), ..Default::default() }
    }

    fn clips(dir: &Path) {
        write_wav(dir.join("a.wav"), &AudioSignal::sine(10_000, 300.0, 0.5, 0.03)).unwrap();
        write_wav(dir.join("b.wav"), &AudioSignal::sine(10_000, 500.0, 0.5, 0.03)).unwrap();
        std::fs::write(dir.join("notes.txt"), "ignored").unwrap();
    }

    #[test]
    fn two_clips_three_reps() {
        let audio = tempfile::tempdir().unwrap();
        clips(audio.path());
        let out = tempfile::tempdir().unwrap();
        let manifest = make_dataset(&small_config(), audio.path(), out.path()).unwrap();
        let records = read_manifest(&manifest).unwrap();
        assert_eq!(records.len(), 6);
        for r in &records {
            assert!(r.events_path.exists() && r.audio_path.exists());
            assert!((r.direction[0].hypot(r.direction[1]) - 1.0).abs() < 1e-12);
            assert!((0.5..2.0).contains(&r.gain));
        }
        let count = |ext: &str| {
            std::fs::read_dir(out.path())
                .unwrap()
                .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext))
                .count()
        };
        assert_eq!((count("evs"), count("wav")), (6, 6));
    }

    #[test]
    fn rerun_is_identical() {
        let audio = tempfile::tempdir().unwrap();
        clips(audio.path());
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = make_dataset(&small_config(), audio.path(), a.path()).unwrap();
        let mb = make_dataset(&small_config(), audio.path(), b.path()).unwrap();
        assert_eq!(std::fs::read(ma).unwrap(), std::fs::read(mb).unwrap());
        for name in ["a_r0.evs", "b_r2.evs", "a_r1.wav"] {
            assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        }
    }

    #[test]
    fn speckles_get_independent_draws() {
        let audio = tempfile::tempdir().unwrap();
        clips(audio.path());
        let out = tempfile::tempdir().unwrap();
        let mut cfg = small_config();
        cfg.repetitions = 1;
        cfg.scene.speckles.push(Speckle {
            center: [4.0, 4.0],
            amplitude: 0.5,
            sigma: 2.0,
            track: VibrationTrack::at_rest([1.0, 0.0], 1.0),
        });
        make_dataset(&cfg, audio.path(), out.path()).unwrap();
        let scene = SpeckleSceneConfig::load(out.path().join("a_r0.scene.txt")).unwrap();
        let (s0, s1) = (&scene.speckles[0].track, &scene.speckles[1].track);
        assert_ne!(s0.direction, s1.direction);
        assert_ne!(s0.gain, s1.gain);
    }

    #[test]
    fn empty_audio_dir_errors() {
        let audio = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        assert!(matches!(make_dataset(&small_config(), audio.path(), out.path()), Err(Error::Empty(_))));
    }
}
