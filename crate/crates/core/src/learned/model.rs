use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::attention::{attention_backward, attention_forward_taped, AttentionParams};
use super::features::{patch_statistics, PatchStats, STAT_DIM};
use super::loss::{total_loss_grad, LossBreakdown, SpecLossConfig};
use super::ssm::{ssm_backward, ssm_forward_taped, SSMParams, SsmOutput};
use crate::events::PatchSet;
use crate::{AudioSignal, Error, Execution, Result};

/// Architecture sizes and switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub state: usize,
    pub heads: usize,
    pub use_sab: bool,
    pub gate: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { channels: 8, state: 8, heads: 2, use_sab: false, gate: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `C × 6` map from bin statistics to features.
    pub featurizer: DMatrix<f64>,
    pub attention: AttentionParams,
    pub ssm: SSMParams,
    pub use_sab: bool,
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

impl ModelParams {
    /// Featurizer uniform in `±1/√6`, `A = −I`, `B` and `Cout` uniform in
    /// `±1/√fan_in`, `Δ = delta`, gate weights zero with the bias placing
    /// `softplus(b) = delta`.
    pub fn init(cfg: &ModelConfig, delta: f64, rng: &mut impl Rng) -> Result<Self> {
        if cfg.channels == 0 || cfg.state == 0 {
            return Err(Error::arg("channels and state size must be positive"));
        }
        if !(delta > 0.0) {
            return Err(Error::arg("initial delta must be positive"));
        }
        let (c, s) = (cfg.channels, cfg.state);
        let featurizer = uniform(c, STAT_DIM, 1.0 / (STAT_DIM as f64).sqrt(), rng);
        let attention = AttentionParams::init(c, cfg.heads, rng)?;
        let b = uniform(s, c, 1.0 / (c as f64).sqrt(), rng);
        let cout = uniform(1, s, 1.0 / (s as f64).sqrt(), rng);
        let ssm = SSMParams {
            a: -DMatrix::identity(s, s),
            b,
            cout,
            delta,
            gate: cfg.gate,
            gate_w: DVector::zeros(c),
            gate_b: delta.exp_m1().ln(),
        };
        Ok(Self { featurizer, attention, ssm, use_sab: cfg.use_sab })
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            channels: self.featurizer.nrows(),
            state: self.ssm.state_dim(),
            heads: self.attention.heads,
            use_sab: self.use_sab,
            gate: self.ssm.gate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.featurizer.nrows();
        if self.featurizer.ncols() != STAT_DIM {
            return Err(Error::arg("featurizer must have 6 columns"));
        }
        self.attention.validate()?;
        self.ssm.validate()?;
        if self.attention.channels() != c || self.ssm.input_dim() != c {
            return Err(Error::arg("featurizer, attention and SSM widths disagree"));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            featurizer: DMatrix::zeros(self.featurizer.nrows(), STAT_DIM),
            attention: self.attention.zeros_like(),
            ssm: self.ssm.zeros_like(),
            use_sab: self.use_sab,
        }
    }

    /// Every tensor, in serialisation order, each matrix row-major.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<f64>)> {
        fn rows(m: &DMatrix<f64>) -> Vec<f64> {
            m.transpose().as_slice().to_vec()
        }
        vec![
            ("featurizer", rows(&self.featurizer)),
            ("wq", rows(&self.attention.wq)),
            ("wk", rows(&self.attention.wk)),
            ("wv", rows(&self.attention.wv)),
            ("wo", rows(&self.attention.wo)),
            ("a", rows(&self.ssm.a)),
            ("b", rows(&self.ssm.b)),
            ("cout", rows(&self.ssm.cout)),
            ("delta", vec![self.ssm.delta]),
            ("gate_w", self.ssm.gate_w.as_slice().to_vec()),
            ("gate_b", vec![self.ssm.gate_b]),
        ]
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, v)| v).collect()
    }

    /// Inverse of [`to_vec`](Self::to_vec) for a model of this shape.
    pub fn set_from_slice(&mut self, values: &[f64]) -> Result<()> {
        let expect = self.to_vec().len();
        if values.len() != expect {
            return Err(Error::arg(format!("expected {expect} parameters, got {}", values.len())));
        }
        let mut it = values.iter().copied();
        let mut fill = |m: &mut DMatrix<f64>| {
            let (r, c) = m.shape();
            *m = DMatrix::from_row_iterator(r, c, it.by_ref().take(r * c));
        };
        fill(&mut self.featurizer);
        fill(&mut self.attention.wq);
        fill(&mut self.attention.wk);
        fill(&mut self.attention.wv);
        fill(&mut self.attention.wo);
        fill(&mut self.ssm.a);
        fill(&mut self.ssm.b);
        fill(&mut self.ssm.cout);
        let mut rest: Vec<f64> = it.collect();
        self.ssm.gate_b = rest.pop().unwrap();
        self.ssm.delta = rest[0];
        self.ssm.gate_w = DVector::from_vec(rest[1..].to_vec());
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, super::serialize::encode_model(self)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        super::serialize::decode_model(&bytes)
    }
}

fn check_stats(stats: &PatchStats) -> Result<()> {
    if stats.patches() == 0 {
        return Err(Error::Empty("no patches".into()));
    }
    if stats.bins() < 2 || stats.values.iter().any(|p| p.len() != stats.bins()) {
        return Err(Error::arg("patches need a common bin count of at least 2"));
    }
    Ok(())
}

fn featurize_vecs(stats: &PatchStats, w: &DMatrix<f64>) -> Vec<Vec<DVector<f64>>> {
    stats.values.iter().map(|p| p.iter().map(|s| w * DVector::from_column_slice(s)).collect()).collect()
}

/// Per-patch and pooled model output for precomputed statistics.
pub fn forward_patches(stats: &PatchStats, params: &ModelParams, exec: Execution) -> Result<SsmOutput> {
    check_stats(stats)?;
    params.validate()?;
    let f = featurize_vecs(stats, &params.featurizer);
    let g = if params.use_sab { attention_forward_taped(&f, &params.attention, exec)?.0 } else { f };
    Ok(ssm_forward_taped(&g, &params.ssm, exec)?.0)
}

/// Pooled model output for precomputed statistics.
pub fn forward_stats(stats: &PatchStats, params: &ModelParams, exec: Execution) -> Result<Vec<f64>> {
    Ok(forward_patches(stats, params, exec)?.pooled)
}

/// Featurise, optionally aggregate across patches, run the SSM per patch
/// and average the patch outputs into audio at `T / window`.
pub fn model_forward(patches: &PatchSet, params: &ModelParams) -> Result<AudioSignal> {
    let samples = forward_stats(&patch_statistics(patches), params, Execution::default())?;
    Ok(AudioSignal { sample_rate: patches.sample_rate().round().max(1.0) as u32, samples })
}

/// Loss and exact reverse-mode gradient for one training example.
pub fn loss_and_grad(
    stats: &PatchStats,
    reference: &[f64],
    sample_rate: u32,
    params: &ModelParams,
    beta: f64,
    spec: &SpecLossConfig,
    exec: Execution,
) -> Result<(LossBreakdown, ModelParams)> {
    check_stats(stats)?;
    params.validate()?;
    let f = featurize_vecs(stats, &params.featurizer);
    let (g, att_tape) = if params.use_sab {
        let (g, tape) = attention_forward_taped(&f, &params.attention, exec)?;
        (g, Some(tape))
    } else {
        (f.clone(), None)
    };
    let (out, ssm_tape) = ssm_forward_taped(&g, &params.ssm, exec)?;
    let (loss, dy) = total_loss_grad(&out.pooled, reference, sample_rate, beta, spec)?;
    if !loss.total.is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    let mut grad = params.zeros_like();
    let (gssm, dg) = ssm_backward(&g, &params.ssm, &ssm_tape, &dy, exec);
    grad.ssm = gssm;
    let df = match att_tape {
        Some(tape) => {
            let (gatt, df) = attention_backward(&params.attention, &tape, &dg, exec);
            grad.attention = gatt;
            df
        }
        None => dg,
    };
    for (p, dp) in stats.values.iter().zip(&df) {
        for (s, d) in p.iter().zip(dp) {
            if s.iter().any(|&v| v != 0.0) {
                grad.featurizer += d * DVector::from_column_slice(s).transpose();
            }
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{crop_patches, RegionSpec, TimeWindow, VoxelGrid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(use_sab: bool, gate: bool, seed: u64) -> ModelParams {
        let cfg = ModelConfig { channels: 4, state: 4, heads: 2, use_sab, gate };
        ModelParams::init(&cfg, 0.05, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_stats(n: usize, t: usize, seed: u64) -> PatchStats {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PatchStats {
            values: (0..n)
                .map(|_| {
                    (0..t)
                        .map(|_| {
                            let mut s = [0.0f64; 6];
                            s.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
                            s[0] = s[0].abs();
                            s[1] = s[1].abs();
                            s
                        })
                        .collect()
                })
                .collect(),
        }
    }

    #[test]
    fn empty_events_give_silence() {
        let v = VoxelGrid::zeros(16, 12, 12, TimeWindow::new(0, 4000).unwrap());
        let set = crop_patches(&v, &[RegionSpec::new((6, 6), (6, 6), 0), RegionSpec::new((3, 3), (4, 4), 1)]).unwrap();
        for sab in [false, true] {
            let out = model_forward(&set, &params(sab, false, 1)).unwrap();
            assert_eq!(out.samples, vec![0.0; 16]);
            assert_eq!(out.sample_rate, 4000);
        }
    }

    #[test]
    fn sab_off_means_identity_aggregation() {
        let stats = random_stats(3, 10, 2);
        let p = params(false, false, 3);
        let f = featurize_vecs(&stats, &p.featurizer);
        let direct = ssm_forward_taped(&f, &p.ssm, Execution::Sequential).unwrap().0.pooled;
        assert_eq!(forward_stats(&stats, &p, Execution::Sequential).unwrap(), direct);
    }

    #[test]
    fn disabled_attention_gets_zero_gradient() {
        let stats = random_stats(2, 32, 4);
        let reference: Vec<f64> = (0..32).map(|i| (i as f64 * 0.7).sin()).collect();
        let p = params(false, false, 5);
        let (_, g) = loss_and_grad(&stats, &reference, 4000, &p, 0.0, &SpecLossConfig::default(), Execution::Sequential).unwrap();
        assert_eq!(g.attention, p.attention.zeros_like());
    }

    #[test]
    fn parallel_gradient_matches_sequential() {
        let stats = random_stats(4, 64, 6);
        let reference: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        let p = params(true, false, 7);
        let spec = SpecLossConfig { scales: vec![16, 32], bands: 8 };
        let (la, ga) = loss_and_grad(&stats, &reference, 4000, &p, 1e-2, &spec, Execution::Sequential).unwrap();
        let (lb, gb) = loss_and_grad(&stats, &reference, 4000, &p, 1e-2, &spec, Execution::Parallel).unwrap();
        assert_eq!(la, lb);
        for (a, b) in ga.to_vec().iter().zip(gb.to_vec()) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn flat_roundtrip() {
        let p = params(true, true, 8);
        let mut q = p.zeros_like();
        q.set_from_slice(&p.to_vec()).unwrap();
        assert_eq!(p, q);
        assert!(q.set_from_slice(&[1.0]).is_err());
    }
}
