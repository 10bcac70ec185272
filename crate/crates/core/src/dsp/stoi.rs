//! Short-time objective intelligibility, following the reference algorithm:
//! 10 kHz analysis, 15 third-octave bands from 150 Hz, 30-frame (384 ms)
//! segments, clipped normalised correlation.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::resample;
use super::stft::plan;
use crate::{AudioSignal, Error, Execution, Result};

const FS: u32 = 10_000;
const FRAME: usize = 256;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// `numpy.hanning(n + 2)[1:-1]`: no zero end points.
fn inner_hanning(n: usize) -> Vec<f64> {
    (1..=n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n + 1) as f64).cos()).collect()
}

/// Third-octave band matrix over the one-sided FFT bins, edges snapped to bins.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let nearest = |f: f64| {
        (0..bins)
            .min_by(|&a, &b| {
                let fa = a as f64 * FS as f64 / NFFT as f64 - f;
                let fb = b as f64 * FS as f64 / NFFT as f64 - f;
                (fa * fa).total_cmp(&(fb * fb))
            })
            .unwrap()
    };
    (0..BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

fn frame_starts(len: usize, hop: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(FRAME)).step_by(hop)
}

/// Drops frames more than 40 dB below the loudest reference frame and
/// overlap-adds the survivors back together.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = inner_hanning(FRAME);
    let hop = FRAME / 2;
    let window = |s: &[f64], start: usize| -> Vec<f64> { s[start..start + FRAME].iter().zip(&w).map(|(a, b)| a * b).collect() };
    let starts: Vec<usize> = frame_starts(x.len(), hop).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| 20.0 * (window(x, s).iter().map(|v| v * v).sum::<f64>().sqrt() + EPS).log10())
        .collect();
    let loudest = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts.iter().zip(&energies).filter(|(_, &e)| loudest - DYN_RANGE_DB - e < 0.0).map(|(&s, _)| s).collect();
    if kept.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let out_len = (kept.len() - 1) * hop + FRAME;
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (i, &s) in kept.iter().enumerate() {
        for (j, (a, b)) in window(x, s).into_iter().zip(window(y, s)).enumerate() {
            xs[i * hop + j] += a;
            ys[i * hop + j] += b;
        }
    }
    (xs, ys)
}

/// Band envelopes, `frames × bands`.
fn band_envelopes(s: &[f64], bands: &[(usize, usize)]) -> Vec<[f64; BANDS]> {
    let w = inner_hanning(FRAME);
    let fft = plan(NFFT);
    let starts: Vec<usize> = frame_starts(s.len(), FRAME / 2).collect();
    Execution::default().map(&starts, |&start| {
        let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
        for j in 0..FRAME {
            buf[j].re = s[start + j] * w[j];
        }
        fft.process(&mut buf);
        let mut env = [0.0; BANDS];
        for (e, &(lo, hi)) in env.iter_mut().zip(bands) {
            *e = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        }
        env
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Intelligibility of `estimate` relative to the clean `reference`.
pub fn stoi(reference: &[f64], estimate: &[f64], fs: u32) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::arg(format!("length mismatch: {} vs {}", reference.len(), estimate.len())));
    }
    let (x, y) = if fs != FS {
        (
            resample(&AudioSignal::new(fs, reference.to_vec())?, FS)?.samples,
            resample(&AudioSignal::new(fs, estimate.to_vec())?, FS)?.samples,
        )
    } else {
        (reference.to_vec(), estimate.to_vec())
    };
    let min_len = (FS as usize * 384) / 1000;
    if x.len() < min_len {
        return Err(Error::arg(format!("signal too short: {} ms, need at least 384 ms", reference.len() as u64 * 1000 / fs as u64)));
    }
    let (x, y) = remove_silent_frames(&x, &y);
    let bands = third_octave_bands();
    let xe = band_envelopes(&x, &bands);
    let ye = band_envelopes(&y, &bands);
    if xe.len() < SEGMENT {
        return Err(Error::arg(format!("signal too short: {} non-silent frames, need {SEGMENT}", xe.len())));
    }
    let clip = 10f64.powf(-BETA_DB / 20.0);
    let segments = xe.len() - SEGMENT + 1;
    let per_segment = Execution::default().map_range(segments, |m| {
        let mut total = 0.0;
        for b in 0..BANDS {
            let xs: Vec<f64> = xe[m..m + SEGMENT].iter().map(|f| f[b]).collect();
            let ys: Vec<f64> = ye[m..m + SEGMENT].iter().map(|f| f[b]).collect();
            let scale = norm(&xs) / (norm(&ys) + EPS);
            let mut yp: Vec<f64> = ys.iter().zip(&xs).map(|(yv, xv)| (yv * scale).min(xv * (1.0 + clip))).collect();
            let mut xc = xs;
            for v in [&mut yp, &mut xc] {
                let mean = v.iter().sum::<f64>() / SEGMENT as f64;
                v.iter_mut().for_each(|e| *e -= mean);
                let n = norm(v) + EPS;
                v.iter_mut().for_each(|e| *e /= n);
            }
            total += yp.iter().zip(&xc).map(|(a, b)| a * b).sum::<f64>();
        }
        total
    });
    Ok(per_segment.iter().sum::<f64>() / (segments * BANDS) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Harmonic buzz with a syllable-rate envelope and pitch drift.
    pub(crate) fn speech_like(fs: u32, seconds: f64) -> Vec<f64> {
        let n = (fs as f64 * seconds) as usize;
        let mut phase = 0.0;
        (0..n)
            .map(|i| {
                let t = i as f64 / fs as f64;
                let f0 = 120.0 + 30.0 * (2.0 * PI * 0.7 * t).sin();
                phase += 2.0 * PI * f0 / fs as f64;
                let env = (0.5 - 0.5 * (2.0 * PI * 4.0 * t).cos()).powi(2);
                let voice: f64 = (1..=20).map(|h| (h as f64 * phase).sin() / h as f64 * (1.0 + (h as f64 * 0.3 + t).sin())).sum();
                env * voice
            })
            .collect()
    }

    #[test]
    fn band_edges_match_reference_layout() {
        let b = third_octave_bands();
        assert_eq!(b.len(), 15);
        assert_eq!(b[0], (7, 9));
        assert!(b.windows(2).all(|w| w[0].1 == w[1].0));
    }

    #[test]
    fn identity_scores_one() {
        let x = speech_like(16_000, 1.5);
        assert!((stoi(&x, &x, 16_000).unwrap() - 1.0).abs() < 1e-6);
        let x10 = speech_like(10_000, 1.0);
        assert!((stoi(&x10, &x10, 10_000).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn decreases_with_noise() {
        let x = speech_like(16_000, 2.0);
        let r = crate::signal::rms(&x);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n: Vec<f64> = (0..x.len()).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).collect();
        let scores: Vec<f64> = [0.01, 0.1, 0.5]
            .iter()
            .map(|lvl| {
                let y: Vec<f64> = x.iter().zip(&n).map(|(a, b)| a + lvl * r * b).collect();
                stoi(&x, &y, 16_000).unwrap()
            })
            .collect();
        assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
        assert!(scores[0] < 1.0);
    }

    #[test]
    fn short_input_rejected() {
        let x = speech_like(16_000, 0.3);
        let err = stoi(&x, &x, 16_000).unwrap_err().to_string();
        assert!(err.contains("signal too short"), "{err}");
    }

    #[test]
    fn deterministic() {
        let x = speech_like(8000, 1.0);
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + 0.05 * ((i * 7919) % 13) as f64 / 13.0).collect();
        assert_eq!(stoi(&x, &y, 8000).unwrap(), stoi(&x, &y, 8000).unwrap());
    }
}
