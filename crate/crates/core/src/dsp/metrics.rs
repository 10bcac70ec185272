use super::{resample, stoi};
use crate::signal::dot;
use crate::{AudioSignal, Error, Execution, Result};

pub const SNR_CAP_DB: f64 = 100.0;

/// `10 log10(‖ref‖² / ‖est − ref‖²)`, capped at [`SNR_CAP_DB`].
pub fn snr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::arg(format!("length mismatch: {} vs {}", reference.len(), estimate.len())));
    }
    let power = dot(reference, reference);
    if power == 0.0 {
        return Err(Error::Empty("reference signal is all zeros".into()));
    }
    let noise: f64 = reference.iter().zip(estimate).map(|(r, e)| (e - r) * (e - r)).sum();
    if noise == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (power / noise).log10()).min(SNR_CAP_DB))
}

/// Overlapping parts of a reference and a delayed, rescaled estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub reference: Vec<f64>,
    pub estimate: Vec<f64>,
    /// `estimate[i + lag]` lines up with `reference[i]`.
    pub lag: isize,
    pub gain: f64,
}

fn overlap(n_ref: usize, n_est: usize, lag: isize) -> (usize, usize) {
    let start = (-lag).max(0) as usize;
    let end = (n_ref as isize).min(n_est as isize - lag).max(start as isize) as usize;
    (start, end)
}

/// Picks the lag within `±max_lag` samples maximising the magnitude of the
/// normalised cross-correlation, then the least-squares gain on the overlap.
pub fn align(reference: &[f64], estimate: &[f64], max_lag: usize) -> Result<AlignedPair> {
    if reference.is_empty() || estimate.is_empty() {
        return Err(Error::Empty("cannot align empty signals".into()));
    }
    let max_lag = max_lag as isize;
    let scores = Execution::default().map_range((2 * max_lag + 1) as usize, |i| {
        let lag = i as isize - max_lag;
        let (s, e) = overlap(reference.len(), estimate.len(), lag);
        if e <= s {
            return 0.0;
        }
        let r = &reference[s..e];
        let x = &estimate[(s as isize + lag) as usize..(e as isize + lag) as usize];
        let denom = (dot(r, r) * dot(x, x)).sqrt();
        if denom > 0.0 { (dot(r, x) / denom).abs() } else { 0.0 }
    });
    let mut best = 0isize;
    let mut best_score = f64::NEG_INFINITY;
    for (i, &sc) in scores.iter().enumerate() {
        let lag = i as isize - max_lag;
        if sc > best_score + 1e-12 || ((sc - best_score).abs() <= 1e-12 && lag.abs() < best.abs()) {
            best = lag;
            best_score = sc;
        }
    }
    let (s, e) = overlap(reference.len(), estimate.len(), best);
    if e <= s {
        return Err(Error::Empty("signals do not overlap at any lag".into()));
    }
    let r = reference[s..e].to_vec();
    let x = &estimate[(s as isize + best) as usize..(e as isize + best) as usize];
    let ee = dot(x, x);
    let gain = if ee > 0.0 { dot(&r, x) / ee } else { 0.0 };
    Ok(AlignedPair { reference: r, estimate: x.iter().map(|v| v * gain).collect(), lag: best, gain })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub snr_db: f64,
    pub stoi: Option<f64>,
    pub best_lag_ms: f64,
    pub best_gain: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "snr_db,stoi,best_lag_ms,best_gain";

    pub fn csv_row(&self) -> String {
        let stoi = self.stoi.map(|s| format!("{s:.6}")).unwrap_or_default();
        format!("{:.6},{stoi},{:.6},{:.6}", self.snr_db, self.best_lag_ms, self.best_gain)
    }
}

/// Aligns `estimate` to `reference` (±10 ms, best gain) and scores it. The
/// estimate is resampled to the reference rate first if they differ.
pub fn evaluate(reference: &AudioSignal, estimate: &AudioSignal, speech: bool) -> Result<MetricsReport> {
    let est = if estimate.sample_rate != reference.sample_rate {
        resample(estimate, reference.sample_rate)?
    } else {
        estimate.clone()
    };
    let max_lag = (reference.sample_rate as f64 * 0.010).round() as usize;
    let pair = align(&reference.samples, &est.samples, max_lag)?;
    let snr_db = snr(&pair.reference, &pair.estimate)?;
    let stoi = if speech { Some(stoi(&pair.reference, &pair.estimate, reference.sample_rate)?) } else { None };
    Ok(MetricsReport {
        snr_db,
        stoi,
        best_lag_ms: pair.lag as f64 * 1000.0 / reference.sample_rate as f64,
        best_gain: pair.gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identity_hits_cap_and_ten_db_case() {
        let r = noise(1000, 1);
        assert_eq!(snr(&r, &r).unwrap(), SNR_CAP_DB);
        let e = [1.0, 0.0, 0.0, 0.0];
        let est = [1.0, (0.1f64).sqrt(), 0.0, 0.0];
        assert!((snr(&e, &est).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_reference_and_mismatch_rejected() {
        assert!(snr(&[0.0; 4], &[1.0; 4]).is_err());
        assert!(snr(&[1.0; 4], &[1.0; 3]).is_err());
    }

    #[test]
    fn monotone_in_noise_level() {
        let r = noise(2000, 2);
        let n = noise(2000, 3);
        let mut last = f64::INFINITY;
        for level in [0.01, 0.05, 0.2, 1.0] {
            let est: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + level * b).collect();
            let s = snr(&r, &est).unwrap();
            assert!(s < last);
            last = s;
        }
    }

    #[test]
    fn shift_invariance() {
        let r = noise(500, 4);
        let e: Vec<f64> = r.iter().zip(noise(500, 5)).map(|(a, b)| a + 0.1 * b).collect();
        let s0 = snr(&r, &e).unwrap();
        let s1 = snr(&r[37..], &e[37..]).unwrap();
        let (mut rr, mut ee) = (r.clone(), e.clone());
        rr.rotate_left(37);
        ee.rotate_left(37);
        assert!((snr(&rr, &ee).unwrap() - s0).abs() < 1e-9);
        assert!(s1.is_finite());
    }

    #[test]
    fn align_recovers_lag_sign_and_gain() {
        let r = noise(4000, 6);
        let mut e = vec![0.0; 23];
        e.extend(r.iter().map(|v| -2.5 * v));
        let p = align(&r, &e, 80).unwrap();
        assert_eq!(p.lag, 23);
        assert!((p.gain + 0.4).abs() < 1e-12);
        assert!(snr(&p.reference, &p.estimate).unwrap() >= SNR_CAP_DB - 1e-9);
    }

    #[test]
    fn evaluate_misaligned_matches_aligned() {
        let fs = 8000;
        let r = AudioSignal { sample_rate: fs, samples: noise(8000, 7) };
        let n = noise(8000, 8);
        let est: Vec<f64> = r.samples.iter().zip(&n).map(|(a, b)| a + 0.1 * b).collect();
        let aligned = evaluate(&r, &AudioSignal { sample_rate: fs, samples: est.clone() }, false).unwrap();
        let mut shifted = vec![0.0; 40];
        shifted.extend(&est);
        let moved = evaluate(&r, &AudioSignal { sample_rate: fs, samples: shifted }, false).unwrap();
        assert!((moved.snr_db - aligned.snr_db).abs() < 0.1);
        assert!((moved.best_lag_ms - 5.0).abs() < 1e-9);
        assert!(aligned.stoi.is_none());
    }
}
