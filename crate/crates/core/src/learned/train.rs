use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::AttentionParams;
use super::features::{patch_statistics, PatchStats};
use super::loss::{LossBreakdown, SpecLossConfig, DEFAULT_BETA};
use super::model::{loss_and_grad, ModelConfig, ModelParams};
use crate::dsp::read_wav;
use crate::events::{
    accumulate_frame, crop_patches, extract_speckle_regions, read_events, voxelize, EventStream, RegionSpec,
    TimeWindow,
};
use crate::kv::{Echo, KvConfig};
use crate::sim::read_manifest;
use crate::{AudioSignal, Error, Execution, Result};

/// How an event recording becomes a training example.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    pub bins: usize,
    pub sample_rate: u32,
    pub patch_extent: (usize, usize),
    pub max_patches: usize,
    /// Region threshold as a fraction of the busiest pixel's count.
    pub region_fraction: f64,
    pub min_area: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { bins: 512, sample_rate: 4000, patch_extent: (32, 32), max_patches: 4, region_fraction: 0.1, min_area: 4 }
    }
}

impl SampleConfig {
    /// `[0, bins / sample_rate)` in microseconds.
    pub fn window(&self) -> Result<TimeWindow> {
        if self.bins < 2 || self.sample_rate == 0 {
            return Err(Error::arg("need at least two bins and a positive sample rate"));
        }
        TimeWindow::new(0, (self.bins as u64 * 1_000_000).div_ceil(self.sample_rate as u64))
    }
}

/// Cached model input and target for one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub id: String,
    pub stats: PatchStats,
    pub regions: Vec<RegionSpec>,
    /// Ground truth sampled at the voxel bin times.
    pub reference: Vec<f64>,
    pub sample_rate: u32,
}

/// Busiest speckle regions of the accumulated frame, at most `max_patches`.
/// A region whose centre lies within half a patch of a busier one is
/// dropped, which folds the two event lobes of a vibrating speckle into one.
pub fn auto_regions(stream: &EventStream, window: TimeWindow, cfg: &SampleConfig) -> Result<Vec<RegionSpec>> {
    let accum = accumulate_frame(stream, window)?;
    let peak = accum.data.iter().copied().max().unwrap_or(0);
    if peak == 0 {
        return Err(Error::Empty("no events inside the analysis window".into()));
    }
    let min_count = ((peak as f64 * cfg.region_fraction).ceil() as u32).max(1);
    let (hx, hy) = ((cfg.patch_extent.0 / 2) as i64, (cfg.patch_extent.1 / 2) as i64);
    let mut regions: Vec<RegionSpec> = Vec::new();
    for r in extract_speckle_regions(&accum, min_count, cfg.min_area, cfg.patch_extent)? {
        if regions.len() == cfg.max_patches {
            break;
        }
        let near = |k: &RegionSpec| (k.center.0 - r.center.0).abs() < hx && (k.center.1 - r.center.1).abs() < hy;
        if !regions.iter().any(near) {
            regions.push(RegionSpec { id: regions.len(), ..r });
        }
    }
    if regions.is_empty() {
        return Err(Error::Empty("no speckle regions found".into()));
    }
    Ok(regions)
}

pub fn prepare_sample(id: &str, stream: &EventStream, truth: &AudioSignal, cfg: &SampleConfig) -> Result<TrainSample> {
    let window = cfg.window()?;
    let regions = auto_regions(stream, window, cfg)?;
    let voxel = voxelize(stream, cfg.bins, window)?;
    let patches = crop_patches(&voxel, &regions)?;
    let reference = (0..cfg.bins).map(|b| truth.value_at(voxel.bin_time_us(b) * 1e-6)).collect();
    Ok(TrainSample { id: id.to_string(), stats: patch_statistics(&patches), regions, reference, sample_rate: cfg.sample_rate })
}

/// Reads and prepares every manifest entry.
pub fn load_samples(manifest: impl AsRef<Path>, cfg: &SampleConfig) -> Result<Vec<TrainSample>> {
    let records = read_manifest(manifest.as_ref())?;
    if records.is_empty() {
        return Err(Error::Empty(format!("manifest {} lists no samples", manifest.as_ref().display())));
    }
    records
        .iter()
        .map(|r| prepare_sample(&r.id, &read_events(&r.events_path)?, &read_wav(&r.audio_path)?, cfg))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta: f64,
    pub iterations_phase1: usize,
    pub iterations_phase2: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    /// Switch the aggregation block on for phase 2; off gives the ablation.
    pub use_sab: bool,
    pub model: ModelConfig,
    pub spec: SpecLossConfig,
    pub sample: SampleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta: DEFAULT_BETA,
            iterations_phase1: 300,
            iterations_phase2: 300,
            batch_size: 1,
            rng_seed: 0,
            use_sab: true,
            model: ModelConfig::default(),
            spec: SpecLossConfig::default(),
            sample: SampleConfig::default(),
        }
    }
}

const TRAIN_KEYS: &[&str] = &[
    "learning_rate",
    "beta",
    "iterations_phase1",
    "iterations_phase2",
    "batch_size",
    "seed",
    "use_sab",
    "channels",
    "state",
    "heads",
    "gate",
    "bins",
    "sample_rate",
    "patch_width",
    "patch_height",
    "max_patches",
    "region_fraction",
    "mel_bands",
];

impl TrainConfig {
    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        cfg.reject_unknown(TRAIN_KEYS)?;
        let d = Self::default();
        let out = Self {
            learning_rate: cfg.get_or("learning_rate", d.learning_rate)?,
            beta: cfg.get_or("beta", d.beta)?,
            iterations_phase1: cfg.get_or("iterations_phase1", d.iterations_phase1)?,
            iterations_phase2: cfg.get_or("iterations_phase2", d.iterations_phase2)?,
            batch_size: cfg.get_or("batch_size", d.batch_size)?,
            rng_seed: cfg.get_or("seed", d.rng_seed)?,
            use_sab: cfg.get_or("use_sab", d.use_sab)?,
            model: ModelConfig {
                channels: cfg.get_or("channels", d.model.channels)?,
                state: cfg.get_or("state", d.model.state)?,
                heads: cfg.get_or("heads", d.model.heads)?,
                use_sab: false,
                gate: cfg.get_or("gate", d.model.gate)?,
            },
            spec: SpecLossConfig { scales: d.spec.scales.clone(), bands: cfg.get_or("mel_bands", d.spec.bands)? },
            sample: SampleConfig {
                bins: cfg.get_or("bins", d.sample.bins)?,
                sample_rate: cfg.get_or("sample_rate", d.sample.sample_rate)?,
                patch_extent: (cfg.get_or("patch_width", d.sample.patch_extent.0)?, cfg.get_or("patch_height", d.sample.patch_extent.1)?),
                max_patches: cfg.get_or("max_patches", d.sample.max_patches)?,
                region_fraction: cfg.get_or("region_fraction", d.sample.region_fraction)?,
                min_area: d.sample.min_area,
            },
        };
        out.validate()?;
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KvConfig::load(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg("learning rate must be positive"));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::arg("beta must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be at least 1"));
        }
        if !(self.sample.region_fraction > 0.0 && self.sample.region_fraction <= 1.0) {
            return Err(Error::arg("region_fraction must lie in (0, 1]"));
        }
        self.sample.window()?;
        let widest = self.spec.scales.iter().copied().max().unwrap_or(0);
        if self.beta > 0.0 && self.sample.bins < widest {
            return Err(Error::arg(format!("{} bins are fewer than the widest spectral scale {widest}", self.sample.bins)));
        }
        Ok(())
    }

    pub fn echo(&self) -> Echo {
        let mut e = Echo::default();
        e.set("learning_rate", self.learning_rate)
            .set("beta", self.beta)
            .set("iterations_phase1", self.iterations_phase1)
            .set("iterations_phase2", self.iterations_phase2)
            .set("batch_size", self.batch_size)
            .set("seed", self.rng_seed)
            .set("use_sab", self.use_sab)
            .set("channels", self.model.channels)
            .set("state", self.model.state)
            .set("heads", self.model.heads)
            .set("gate", self.model.gate)
            .set("bins", self.sample.bins)
            .set("sample_rate", self.sample.sample_rate)
            .set("patch_width", self.sample.patch_extent.0)
            .set("patch_height", self.sample.patch_extent.1)
            .set("max_patches", self.sample.max_patches)
            .set("region_fraction", self.sample.region_fraction)
            .set("mel_bands", self.spec.bands);
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub phase: u8,
    pub loss: LossBreakdown,
}

pub const LOSS_LOG_HEADER: &str = "step,phase,loss_total,loss_sisnr,loss_spec";

pub fn write_loss_log(path: impl AsRef<Path>, log: &[LossRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    writeln!(out, "{LOSS_LOG_HEADER}").unwrap();
    for r in log {
        writeln!(out, "{},{},{},{},{}", r.step, r.phase, r.loss.total, r.loss.sisnr, r.loss.spec).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Mean of the first and last `window` total losses.
pub fn smoothed_endpoints(log: &[LossRecord], window: usize) -> Option<(f64, f64)> {
    if log.len() < window || window == 0 {
        return None;
    }
    let mean = |s: &[LossRecord]| s.iter().map(|r| r.loss.total).sum::<f64>() / s.len() as f64;
    Some((mean(&log[..window]), mean(&log[log.len() - window..])))
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<LossRecord>,
}

/// Endless reshuffled pass over sample indices.
struct Sampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Two-phase plain SGD: phase 1 without the aggregation block, then fresh
/// attention weights and everything fine-tuned together. Samples are drawn
/// from a seeded reshuffle of the whole set every epoch.
pub fn train(samples: &[TrainSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(samples, cfg, Execution::default())
}

pub fn train_with(samples: &[TrainSample], cfg: &TrainConfig, exec: Execution) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("no training samples".into()));
    }
    let rate = samples[0].sample_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut params = ModelParams::init(&ModelConfig { use_sab: false, ..cfg.model }, 1.0 / rate as f64, &mut rng)?;
    let mut sampler = Sampler { rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x5eed), order: (0..samples.len()).collect(), pos: samples.len() };
    let mut log = Vec::with_capacity(cfg.iterations_phase1 + cfg.iterations_phase2);
    let total_steps = cfg.iterations_phase1 + cfg.iterations_phase2;
    for step in 0..total_steps {
        let phase = if step < cfg.iterations_phase1 { 1 } else { 2 };
        if step == cfg.iterations_phase1 && cfg.use_sab {
            params.attention = AttentionParams::init(cfg.model.channels, cfg.model.heads, &mut rng)?;
            params.use_sab = true;
        }
        let mut grad = vec![0.0; params.to_vec().len()];
        let mut loss = LossBreakdown { total: 0.0, sisnr: 0.0, spec: 0.0 };
        for _ in 0..cfg.batch_size {
            let s = &samples[sampler.next()];
            let (l, g) = loss_and_grad(&s.stats, &s.reference, s.sample_rate, &params, cfg.beta, &cfg.spec, exec)
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("training diverged at step {step}: {m}")),
                    other => other,
                })?;
            let k = 1.0 / cfg.batch_size as f64;
            loss.total += k * l.total;
            loss.sisnr += k * l.sisnr;
            loss.spec += k * l.spec;
            grad.iter_mut().zip(g.to_vec()).for_each(|(a, b)| *a += k * b);
        }
        if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("training diverged at step {step}: non-finite loss or gradient")));
        }
        let mut flat = params.to_vec();
        flat.iter_mut().zip(&grad).for_each(|(p, g)| *p -= cfg.learning_rate * g);
        params.set_from_slice(&flat)?;
        params.ssm.delta = params.ssm.delta.max(1e-8);
        log.push(LossRecord { step, phase, loss });
    }
    Ok(TrainOutcome { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_scene, SpeckleSceneConfig};

    fn record(step: usize, total: f64) -> LossRecord {
        LossRecord { step, phase: 1, loss: LossBreakdown { total, sisnr: total, spec: 0.0 } }
    }

    fn toy_sample(freq: f64) -> TrainSample {
        let audio = AudioSignal::sine(10_000, freq, 0.5, 0.14);
        let (events, truth) = simulate_scene(&SpeckleSceneConfig::default(), &audio, 0.14).unwrap();
        prepare_sample("toy", &events, &truth, &SampleConfig::default()).unwrap()
    }

    #[test]
    fn config_echo_roundtrips() {
        let cfg = TrainConfig::from_kv(&KvConfig::parse("learning_rate = 0.01\nseed = 9\nheads = 4\nbins = 1024\n").unwrap()).unwrap();
        assert_eq!((cfg.learning_rate, cfg.rng_seed, cfg.model.heads, cfg.sample.bins), (0.01, 9, 4, 1024));
        assert_eq!(TrainConfig::from_kv(&KvConfig::parse(cfg.echo().text()).unwrap()).unwrap(), cfg);
        assert!(matches!(
            TrainConfig::from_kv(&KvConfig::parse("momentum = 0.9\n").unwrap()),
            Err(Error::Config { line: 1, .. })
        ));
    }

    #[test]
    fn window_must_fit_the_widest_scale() {
        let mut cfg = TrainConfig::default();
        cfg.sample.bins = 256;
        assert!(cfg.validate().is_err());
        cfg.beta = 0.0;
        assert!(cfg.validate().is_ok());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn smoothing_averages_both_ends() {
        let log: Vec<LossRecord> = (0..10).map(|i| record(i, i as f64)).collect();
        assert_eq!(smoothed_endpoints(&log, 3), Some((1.0, 8.0)));
        assert_eq!(smoothed_endpoints(&log, 11), None);
        assert_eq!(smoothed_endpoints(&log, 0), None);
    }

    #[test]
    fn loss_log_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        write_loss_log(&p, &[record(0, 1.5), record(1, -2.0)]).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines, [LOSS_LOG_HEADER, "0,1,1.5,1.5,0", "1,1,-2,-2,0"]);
    }

    #[test]
    fn one_region_per_vibrating_speckle() {
        let s = toy_sample(300.0);
        assert_eq!(s.regions.len(), 1);
        assert!((s.regions[0].center.0 - 16).abs() <= 1 && (s.regions[0].center.1 - 16).abs() <= 2, "{:?}", s.regions[0]);
        assert_eq!(s.reference.len(), 512);
        assert_eq!(s.stats.values[0].len(), 512);
    }

    #[test]
    fn silent_recording_has_no_regions() {
        let window = SampleConfig::default().window().unwrap();
        assert!(matches!(auto_regions(&EventStream::empty(8, 8), window, &SampleConfig::default()), Err(Error::Empty(_))));
    }

    #[test]
    fn training_is_deterministic_and_logs_every_step() {
        let samples = [toy_sample(300.0), toy_sample(450.0)];
        let cfg = TrainConfig { iterations_phase1: 4, iterations_phase2: 3, ..Default::default() };
        let a = train_with(&samples, &cfg, Execution::Sequential).unwrap();
        let b = train_with(&samples, &cfg, Execution::Parallel).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params, b.params);
        assert_eq!(a.log.len(), 7);
        assert_eq!(a.log.iter().map(|r| r.phase).collect::<Vec<_>>(), [1, 1, 1, 1, 2, 2, 2]);
        assert!(a.params.use_sab);
        let other = train(&samples, &TrainConfig { rng_seed: 1, ..cfg.clone() }).unwrap();
        assert_ne!(other.params, a.params);
    }

    #[test]
    fn blow_up_is_a_numeric_error() {
        let samples = [toy_sample(300.0)];
        let cfg = TrainConfig { learning_rate: 1e12, iterations_phase1: 30, iterations_phase2: 0, ..Default::default() };
        assert!(matches!(train(&samples, &cfg), Err(Error::Numeric(_))));
    }
}
