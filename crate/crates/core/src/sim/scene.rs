use std::path::Path;

use super::generator::EventGenerator;
use crate::events::EventStream;
use crate::kv::{parse_fields, Echo, KvConfig};
use crate::{AudioSignal, Error, Execution, Result};

/// Rendered intensities are clamped to `[INTENSITY_FLOOR, 1]` before the log.
pub const INTENSITY_FLOOR: f64 = 1e-4;

/// Image-plane motion of one speckle: `offsets[t] = gain * q_t * direction`.
#[derive(Debug, Clone, PartialEq)]
pub struct VibrationTrack {
    pub direction: [f64; 2],
    pub gain: f64,
    pub offsets: Vec<[f64; 2]>,
}

impl VibrationTrack {
    /// A track with no offsets yet; it renders at rest until driven.
    pub fn at_rest(direction: [f64; 2], gain: f64) -> Self {
        Self { direction, gain, offsets: Vec::new() }
    }

    pub fn offset(&self, frame: usize) -> [f64; 2] {
        self.offsets.get(frame).copied().unwrap_or([0.0, 0.0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Speckle {
    pub center: [f64; 2],
    pub amplitude: f64,
    pub sigma: f64,
    pub track: VibrationTrack,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseConfig {
    /// Poisson rate of spurious events, per pixel, in Hz.
    pub leak_event_rate: f64,
    /// Standard deviation of the per-event threshold perturbation.
    pub threshold_jitter_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeckleSceneConfig {
    pub width: u16,
    pub height: u16,
    pub speckles: Vec<Speckle>,
    pub background: f64,
    pub frame_rate: u32,
    /// Log-intensity contrast threshold.
    pub threshold: f64,
    pub noise: NoiseConfig,
    pub rng_seed: u64,
}

impl Default for SpeckleSceneConfig {
    /// 32×32 sensor, one speckle in the middle vibrating vertically, 10 kHz.
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            speckles: vec![Speckle {
                center: [16.0, 16.0],
                amplitude: 0.8,
                sigma: 3.0,
                track: VibrationTrack::at_rest([0.0, 1.0], 1.0),
            }],
            background: 0.05,
            frame_rate: 10_000,
            threshold: 0.05,
            noise: NoiseConfig::default(),
            rng_seed: 0,
        }
    }
}

const SCENE_KEYS: &[&str] = &[
    "width",
    "height",
    "background",
    "frame_rate",
    "threshold",
    "leak_event_rate",
    "threshold_jitter_sigma",
    "seed",
    "speckle",
];

impl SpeckleSceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::arg("sensor dimensions must be positive"));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::arg("threshold must be positive"));
        }
        if !(0.0..1.0).contains(&self.background) {
            return Err(Error::arg("background must lie in [0, 1)"));
        }
        if self.frame_rate == 0 {
            return Err(Error::arg("frame rate must be positive"));
        }
        if self.noise.leak_event_rate < 0.0 || self.noise.threshold_jitter_sigma < 0.0 {
            return Err(Error::arg("noise parameters must be non-negative"));
        }
        for s in &self.speckles {
            if !(s.amplitude > 0.0 && s.amplitude <= 1.0) || !(s.sigma > 0.0) {
                return Err(Error::arg("speckle amplitude must be in (0, 1] and sigma positive"));
            }
        }
        Ok(())
    }

    /// Reads a key-value scene file. `speckle = cx cy amplitude sigma dir_x dir_y gain`
    /// may repeat; directions are normalised. Without any `speckle` line the
    /// default single speckle is used.
    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        cfg.reject_unknown(SCENE_KEYS)?;
        let d = Self::default();
        let mut speckles = Vec::new();
        for e in cfg.all("speckle") {
            let f = parse_fields(e, 7)?;
            let norm = f[4].hypot(f[5]);
            if norm == 0.0 {
                return Err(Error::Config { line: e.line, message: "zero vibration direction".into() });
            }
            speckles.push(Speckle {
                center: [f[0], f[1]],
                amplitude: f[2],
                sigma: f[3],
                track: VibrationTrack::at_rest([f[4] / norm, f[5] / norm], f[6]),
            });
        }
        let scene = Self {
            width: cfg.get_or("width", d.width)?,
            height: cfg.get_or("height", d.height)?,
            speckles: if speckles.is_empty() { d.speckles } else { speckles },
            background: cfg.get_or("background", d.background)?,
            frame_rate: cfg.get_or("frame_rate", d.frame_rate)?,
            threshold: cfg.get_or("threshold", d.threshold)?,
            noise: NoiseConfig {
                leak_event_rate: cfg.get_or("leak_event_rate", 0.0)?,
                threshold_jitter_sigma: cfg.get_or("threshold_jitter_sigma", 0.0)?,
            },
            rng_seed: cfg.get_or("seed", d.rng_seed)?,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KvConfig::load(path)?)
    }

    /// Fully resolved settings in the same key-value syntax.
    pub fn echo(&self) -> Echo {
        let mut e = Echo::default();
        e.set("width", self.width)
            .set("height", self.height)
            .set("background", self.background)
            .set("frame_rate", self.frame_rate)
            .set("threshold", self.threshold)
            .set("leak_event_rate", self.noise.leak_event_rate)
            .set("threshold_jitter_sigma", self.noise.threshold_jitter_sigma)
            .set("seed", self.rng_seed);
        for s in &self.speckles {
            e.set(
                "speckle",
                format!(
                    "{} {} {} {} {} {} {}",
                    s.center[0], s.center[1], s.amplitude, s.sigma, s.track.direction[0], s.track.direction[1], s.track.gain
                ),
            );
        }
        e
    }

    /// Drives every speckle with `audio` at the scene frame rate.
    pub fn drive(&mut self, audio: &AudioSignal) -> Result<()> {
        for s in &mut self.speckles {
            s.track = audio_to_displacement(audio, s.track.direction, s.track.gain, self.frame_rate)?;
        }
        Ok(())
    }
}

/// Resamples `audio` to `frame_rate` and scales it into per-frame offsets.
pub fn audio_to_displacement(
    audio: &AudioSignal,
    direction: [f64; 2],
    gain: f64,
    frame_rate: u32,
) -> Result<VibrationTrack> {
    if frame_rate == 0 || frame_rate > audio.sample_rate {
        return Err(Error::arg(format!(
            "frame rate {frame_rate} Hz must be in 1..={} Hz",
            audio.sample_rate
        )));
    }
    if !(gain > 0.0) {
        return Err(Error::arg("gain must be positive"));
    }
    if ((direction[0].hypot(direction[1])) - 1.0).abs() > 1e-9 {
        return Err(Error::arg("vibration direction must be a unit vector"));
    }
    let q = audio.resample_linear(frame_rate)?;
    let offsets = q.samples.iter().map(|&v| [gain * v * direction[0], gain * v * direction[1]]).collect();
    Ok(VibrationTrack { direction, gain, offsets })
}

pub fn render_frame(scene: &SpeckleSceneConfig, frame_index: usize) -> Vec<f64> {
    render_frame_with(scene, frame_index, Execution::default())
}

/// `clamp(background + Σ A exp(-|u - c - offset|² / 2σ²), floor, 1)` at integer
/// pixel positions, row-major.
pub fn render_frame_with(scene: &SpeckleSceneConfig, frame_index: usize, exec: Execution) -> Vec<f64> {
    let (w, h) = (scene.width as usize, scene.height as usize);
    let mut img = vec![0.0; w * h];
    let centers: Vec<([f64; 2], f64, f64)> = scene
        .speckles
        .iter()
        .map(|s| {
            let o = s.track.offset(frame_index);
            ([s.center[0] + o[0], s.center[1] + o[1]], s.amplitude, 0.5 / (s.sigma * s.sigma))
        })
        .collect();
    exec.for_each_chunk_mut(&mut img, w, |y, row| {
        let yf = y as f64;
        for (x, px) in row.iter_mut().enumerate() {
            let xf = x as f64;
            let mut v = scene.background;
            for &(c, a, k) in &centers {
                let (dx, dy) = (xf - c[0], yf - c[1]);
                v += a * (-(dx * dx + dy * dy) * k).exp();
            }
            *px = v.clamp(INTENSITY_FLOOR, 1.0);
        }
    });
    img
}

pub fn simulate_scene(
    scene: &SpeckleSceneConfig,
    audio: &AudioSignal,
    duration_s: f64,
) -> Result<(EventStream, AudioSignal)> {
    simulate_scene_with(scene, audio, duration_s, Execution::default())
}

/// Drives the scene with the first `duration_s` of `audio`, renders every
/// frame and streams it through the event model. The returned ground truth is
/// the frame-rate audio that produced the displacements.
pub fn simulate_scene_with(
    scene: &SpeckleSceneConfig,
    audio: &AudioSignal,
    duration_s: f64,
    exec: Execution,
) -> Result<(EventStream, AudioSignal)> {
    scene.validate()?;
    if !(duration_s > 0.0) {
        return Err(Error::arg("duration must be positive"));
    }
    let n = (duration_s * audio.sample_rate as f64).round() as usize;
    if n > audio.len() {
        return Err(Error::arg(format!(
            "requested {duration_s} s but audio holds {:.6} s",
            audio.duration_s()
        )));
    }
    let clip = AudioSignal::new(audio.sample_rate, audio.samples[..n].to_vec())?;
    let mut driven = scene.clone();
    driven.drive(&clip)?;
    let truth = clip.resample_linear(scene.frame_rate)?;
    if truth.len() < 2 {
        return Err(Error::arg("need at least two frames"));
    }
    let mut gen = EventGenerator::new(scene.width, scene.height, scene.frame_rate as f64, scene.threshold, scene.noise, scene.rng_seed)?
        .with_execution(exec);
    for k in 0..truth.len() {
        gen.push_frame(&render_frame_with(&driven, k, exec))?;
    }
    Ok((gen.finish(), truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centroid_above_background(scene: &SpeckleSceneConfig, img: &[f64]) -> (f64, f64, f64) {
        let w = scene.width as usize;
        let (mut m, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for (i, &v) in img.iter().enumerate() {
            let e = v - scene.background;
            m += e;
            sx += e * (i % w) as f64;
            sy += e * (i / w) as f64;
        }
        (sx / m, sy / m, m)
    }

    #[test]
    fn silent_audio_no_offsets() {
        let a = AudioSignal::new(20_000, vec![0.0; 400]).unwrap();
        let t = audio_to_displacement(&a, [1.0, 0.0], 1.0, 10_000).unwrap();
        assert_eq!(t.offsets.len(), 200);
        assert!(t.offsets.iter().all(|o| *o == [0.0, 0.0]));
    }

    #[test]
    fn offset_formula() {
        let a = AudioSignal::new(10_000, vec![0.0, 0.5, -0.25]).unwrap();
        let t = audio_to_displacement(&a, [0.0, 1.0], 2.0, 10_000).unwrap();
        assert_eq!(t.offsets[1], [0.0, 1.0]);
        assert_eq!(t.offsets[2], [0.0, -0.5]);
    }

    #[test]
    fn displacement_argument_checks() {
        let a = AudioSignal::new(8_000, vec![0.0; 10]).unwrap();
        assert!(audio_to_displacement(&a, [1.0, 1.0], 1.0, 8_000).is_err());
        assert!(audio_to_displacement(&a, [1.0, 0.0], 0.0, 8_000).is_err());
        assert!(audio_to_displacement(&a, [1.0, 0.0], 1.0, 16_000).is_err());
    }

    #[test]
    fn rest_frame_matches_frame_zero() {
        let scene = SpeckleSceneConfig::default();
        assert_eq!(render_frame(&scene, 0), render_frame(&scene, 57));
    }

    #[test]
    fn subpixel_shift_moves_centroid_and_keeps_energy() {
        let mut scene = SpeckleSceneConfig::default();
        scene.speckles[0].track = VibrationTrack { direction: [1.0, 0.0], gain: 1.0, offsets: vec![[0.0, 0.0], [0.5, 0.0]] };
        let a = render_frame(&scene, 0);
        let b = render_frame(&scene, 1);
        let (ax, ay, am) = centroid_above_background(&scene, &a);
        let (bx, by, bm) = centroid_above_background(&scene, &b);
        assert!((bx - ax - 0.5).abs() < 1e-3, "{}", bx - ax);
        assert!((by - ay).abs() < 1e-9);
        assert!(((bm - am) / am).abs() < 1e-6);
    }

    #[test]
    fn parallel_render_is_identical() {
        let mut scene = SpeckleSceneConfig::default();
        scene.speckles[0].track.offsets = vec![[0.3, -0.2]];
        assert_eq!(render_frame_with(&scene, 0, Execution::Sequential), render_frame_with(&scene, 0, Execution::Parallel));
    }

    #[test]
    fn config_file_parsing() {
        let cfg = KvConfig::parse(
            "width = 48\nheight = 40\nthreshold = 0.1\nspeckle = 10 12 0.7 2.5 3 4 1.5\nspeckle = 30 20 0.5 3 1 0 0.5\n",
        )
        .unwrap();
        let scene = SpeckleSceneConfig::from_kv(&cfg).unwrap();
        assert_eq!((scene.width, scene.height), (48, 40));
        assert_eq!(scene.speckles.len(), 2);
        assert!((scene.speckles[0].track.direction[0] - 0.6).abs() < 1e-12);
        let again = SpeckleSceneConfig::from_kv(&KvConfig::parse(scene.echo().text()).unwrap()).unwrap();
        assert_eq!(again, scene);

        let bad = KvConfig::parse("width = 4\nspeckle = 1 2 3\n").unwrap();
        assert!(matches!(SpeckleSceneConfig::from_kv(&bad), Err(Error::Config { line: 2, .. })));
        let unknown = KvConfig::parse("colour = red\n").unwrap();
        assert!(matches!(SpeckleSceneConfig::from_kv(&unknown), Err(Error::Config { line: 1, .. })));
    }

    #[test]
    fn silent_scene_is_eventless_and_deterministic() {
        let scene = SpeckleSceneConfig::default();
        let silent = AudioSignal::new(10_000, vec![0.0; 500]).unwrap();
        let (ev, truth) = simulate_scene(&scene, &silent, 0.05).unwrap();
        assert!(ev.is_empty());
        assert_eq!(truth.len(), 500);

        let tone = AudioSignal::sine(20_000, 440.0, 0.5, 0.05);
        let (a, _) = simulate_scene(&scene, &tone, 0.05).unwrap();
        let (b, _) = simulate_scene(&scene, &tone, 0.05).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
        assert!(simulate_scene(&scene, &tone, 0.2).is_err());
    }
}
