use std::f64::consts::LN_10;

use rustfft::num_complex::Complex64;

use crate::dsp::{hann, stft_complex, MelFilterbank, MEL_SCALES};
use crate::signal::{dot, remove_mean};
use crate::{AudioSignal, Error, Execution, Result};

/// Guards the exact-match and silent-estimate singularities of SI-SNR.
pub const SISNR_EPS: f64 = 1e-12;
/// Added to Mel magnitudes before the logarithm.
pub const LOG_FLOOR: f64 = 1e-7;
pub const DEFAULT_BETA: f64 = 1e-4;

fn check_pair(est: &[f64], reference: &[f64]) -> Result<()> {
    if est.len() != reference.len() {
        return Err(Error::arg(format!("length mismatch: {} vs {}", est.len(), reference.len())));
    }
    if est.len() < 2 {
        return Err(Error::arg("need at least two samples"));
    }
    Ok(())
}

fn check_rates(est: &AudioSignal, reference: &AudioSignal) -> Result<()> {
    if est.sample_rate != reference.sample_rate {
        return Err(Error::arg(format!("sample rates differ: {} vs {}", est.sample_rate, reference.sample_rate)));
    }
    Ok(())
}

/// Negative scale-invariant SNR in dB and its gradient with respect to `est`.
pub fn sisnr_loss_grad(est: &[f64], reference: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_pair(est, reference)?;
    let mut r = reference.to_vec();
    remove_mean(&mut r);
    let rr = dot(&r, &r);
    if rr == 0.0 {
        return Err(Error::arg("reference is constant"));
    }
    let mut e = est.to_vec();
    remove_mean(&mut e);
    let alpha = dot(&e, &r) / rr;
    let target: Vec<f64> = r.iter().map(|v| alpha * v).collect();
    let residual: Vec<f64> = e.iter().zip(&target).map(|(a, b)| a - b).collect();
    let (tt, nn) = (dot(&target, &target) + SISNR_EPS, dot(&residual, &residual) + SISNR_EPS);
    let loss = -10.0 * (tt / nn).log10();
    let k = 10.0 / LN_10;
    let mut grad: Vec<f64> = target.iter().zip(&residual).map(|(t, res)| -k * (2.0 * t / tt - 2.0 * res / nn)).collect();
    remove_mean(&mut grad);
    Ok((loss, grad))
}

pub fn loss_sisnr(est: &AudioSignal, reference: &AudioSignal) -> Result<f64> {
    check_rates(est, reference)?;
    Ok(sisnr_loss_grad(&est.samples, &reference.samples)?.0)
}

/// Analysis settings of the multi-resolution Mel loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecLossConfig {
    pub scales: Vec<usize>,
    pub bands: usize,
}

impl Default for SpecLossConfig {
    fn default() -> Self {
        Self { scales: MEL_SCALES.to_vec(), bands: 64 }
    }
}

impl SpecLossConfig {
    /// Weight of the log term at scale `s`.
    pub fn alpha(scale: usize) -> f64 {
        (scale as f64 / 2.0).sqrt()
    }
}

struct MelPass {
    frames: Vec<Vec<Complex64>>,
    mags: Vec<Vec<f64>>,
    mel: Vec<Vec<f64>>,
}

fn mel_pass(x: &[f64], scale: usize, fb: &MelFilterbank) -> Result<MelPass> {
    let frames = stft_complex(x, scale, (scale / 4).max(1), Execution::Sequential)?;
    let mags: Vec<Vec<f64>> = frames.iter().map(|f| f.iter().map(|c| c.norm()).collect()).collect();
    let mel = mags.iter().map(|m| fb.apply(m)).collect();
    Ok(MelPass { frames, mags, mel })
}

/// Multi-scale Mel loss `Σ_s ‖S_e − S_r‖₁ + α_s ‖log S_e − log S_r‖₂` and its
/// gradient with respect to `est`. The L1 term uses `sign(0) = 0`; the L2
/// norm contributes no gradient where the log spectra agree exactly.
pub fn spec_loss_grad(est: &[f64], reference: &[f64], sample_rate: u32, cfg: &SpecLossConfig) -> Result<(f64, Vec<f64>)> {
    check_pair(est, reference)?;
    let largest = cfg.scales.iter().copied().max().unwrap_or(0);
    if est.len() < largest {
        return Err(Error::arg(format!("signal of {} samples shorter than the largest window {largest}", est.len())));
    }
    let nyquist = sample_rate as f64 / 2.0;
    let per_scale = Execution::default().map(&cfg.scales, |&s| -> Result<(f64, Vec<f64>)> {
        let fb = MelFilterbank::new(cfg.bands, s, sample_rate, 0.0, nyquist)?;
        let pe = mel_pass(est, s, &fb)?;
        let pr = mel_pass(reference, s, &fb)?;
        let mut l1 = 0.0;
        let mut sq = 0.0;
        for (me, mr) in pe.mel.iter().zip(&pr.mel) {
            for (a, b) in me.iter().zip(mr) {
                l1 += (a - b).abs();
                let d = (a + LOG_FLOOR).ln() - (b + LOG_FLOOR).ln();
                sq += d * d;
            }
        }
        let l2 = sq.sqrt();
        let alpha = SpecLossConfig::alpha(s);
        let loss = l1 + alpha * l2;
        // ∂L/∂S_e per frame and band, then through the filterbank and |X|
        let window = hann(s);
        let fft = crate::dsp::fft_forward(s);
        let hop = (s / 4).max(1);
        let mut grad = vec![0.0; est.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); s];
        for (f, (me, mr)) in pe.mel.iter().zip(&pr.mel).enumerate() {
            let dmel: Vec<f64> = me
                .iter()
                .zip(mr)
                .map(|(a, b)| {
                    let d = a - b;
                    let sign = if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
                    let log_term = if l2 > 0.0 { alpha * ((a + LOG_FLOOR).ln() - (b + LOG_FLOOR).ln()) / l2 / (a + LOG_FLOOR) } else { 0.0 };
                    sign + log_term
                })
                .collect();
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (k, slot) in buf.iter_mut().enumerate().take(s / 2 + 1) {
                let mag = pe.mags[f][k];
                if mag == 0.0 {
                    continue;
                }
                let dmag: f64 = fb.weights.iter().zip(&dmel).map(|(w, d)| w[k] * d).sum();
                *slot = pe.frames[f][k].conj() / mag * dmag;
            }
            fft.process(&mut buf);
            let start = f * hop;
            for n in 0..s {
                grad[start + n] += window[n] * buf[n].re;
            }
        }
        Ok((loss, grad))
    });
    let mut total = 0.0;
    let mut grad = vec![0.0; est.len()];
    for part in per_scale {
        let (l, g) = part?;
        total += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((total, grad))
}

pub fn loss_spec(est: &AudioSignal, reference: &AudioSignal) -> Result<f64> {
    loss_spec_with(est, reference, &SpecLossConfig::default())
}

pub fn loss_spec_with(est: &AudioSignal, reference: &AudioSignal, cfg: &SpecLossConfig) -> Result<f64> {
    check_rates(est, reference)?;
    Ok(spec_loss_grad(&est.samples, &reference.samples, est.sample_rate, cfg)?.0)
}

/// Components of the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub sisnr: f64,
    pub spec: f64,
}

/// `L_sisnr + β L_spec` and its gradient. With `β = 0` the spectral term is
/// skipped entirely, so the total equals the SI-SNR loss bit for bit.
pub fn total_loss_grad(
    est: &[f64],
    reference: &[f64],
    sample_rate: u32,
    beta: f64,
    cfg: &SpecLossConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    if !(beta >= 0.0) {
        return Err(Error::arg("beta must be non-negative"));
    }
    let (sisnr, mut grad) = sisnr_loss_grad(est, reference)?;
    if beta == 0.0 {
        return Ok((LossBreakdown { total: sisnr, sisnr, spec: 0.0 }, grad));
    }
    let (spec, g) = spec_loss_grad(est, reference, sample_rate, cfg)?;
    grad.iter_mut().zip(&g).for_each(|(a, b)| *a += beta * b);
    Ok((LossBreakdown { total: sisnr + beta * spec, sisnr, spec }, grad))
}

pub fn loss_total(est: &AudioSignal, reference: &AudioSignal, beta: f64) -> Result<f64> {
    check_rates(est, reference)?;
    Ok(total_loss_grad(&est.samples, &reference.samples, est.sample_rate, beta, &SpecLossConfig::default())?.0.total)
}
