use std::f64::consts::PI;

use super::butterworth::{design_highpass, design_lowpass, filtfilt};
use crate::signal::dot;
use crate::{AudioSignal, Error, Result};

/// Delay of one signal relative to another at a single frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseDelay {
    /// Positive when `b` lags `a`.
    pub delay_s: f64,
    /// `2π f delay`, wrapped to `(−π, π]`.
    pub phase_rad: f64,
}

fn wrap(phase: f64) -> f64 {
    let mut p = phase.rem_euclid(2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    p
}

fn bandpass(x: &[f64], freq: f64, fs: f64) -> Result<Vec<f64>> {
    let hp = design_highpass(4, 0.9 * freq, fs)?;
    let lp = design_lowpass(4, (1.1 * freq).min(0.49 * fs), fs)?;
    Ok(filtfilt(&lp, &filtfilt(&hp, x)))
}

/// Band-passes both signals to `freq_hz ± 10 %` and finds the lag within one
/// period that maximises their normalised cross-correlation, refined to
/// sub-sample precision by a parabola through the peak.
pub fn phase_delay(a: &AudioSignal, b: &AudioSignal, freq_hz: f64) -> Result<PhaseDelay> {
    if a.sample_rate != b.sample_rate || a.len() != b.len() {
        return Err(Error::arg("signals must share sample rate and length"));
    }
    let fs = a.sample_rate as f64;
    let fa = bandpass(&a.samples, freq_hz, fs)?;
    let fb = bandpass(&b.samples, freq_hz, fs)?;
    for (raw, band, name) in [(&a.samples, &fa, "first"), (&b.samples, &fb, "second")] {
        let total = dot(raw, raw);
        if total == 0.0 || dot(band, band) < 1e-6 * total {
            return Err(Error::Numeric(format!("{name} signal has insufficient energy near {freq_hz} Hz")));
        }
    }
    let norm = (dot(&fa, &fa) * dot(&fb, &fb)).sqrt();
    let period = (fs / freq_hz).ceil() as isize;
    let n = fa.len() as isize;
    let xcorr = |k: isize| -> f64 {
        let (s, e) = ((-k).max(0), (n - k).min(n));
        (s..e).map(|i| fa[i as usize] * fb[(i + k) as usize]).sum::<f64>() / norm
    };
    let scores: Vec<f64> = (-period..=period).map(xcorr).collect();
    let (best, _) = scores
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let mut lag = best as f64 - period as f64;
    if best > 0 && best + 1 < scores.len() {
        let (l, c, r) = (scores[best - 1], scores[best], scores[best + 1]);
        let denom = l - 2.0 * c + r;
        if denom < 0.0 {
            lag += 0.5 * (l - r) / denom;
        }
    }
    let delay_s = lag / fs;
    Ok(PhaseDelay { delay_s, phase_rad: wrap(2.0 * PI * freq_hz * delay_s) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delayed_sine(fs: u32, f: f64, delay_s: f64) -> AudioSignal {
        let n = fs as usize / 5;
        AudioSignal {
            sample_rate: fs,
            samples: (0..n).map(|i| (2.0 * PI * f * (i as f64 / fs as f64 - delay_s)).sin()).collect(),
        }
    }

    #[test]
    fn identical_signals_have_zero_delay() {
        let a = delayed_sine(48_000, 1000.0, 0.0);
        let r = phase_delay(&a, &a, 1000.0).unwrap();
        assert!(r.delay_s.abs() < 1e-9 && r.phase_rad.abs() < 1e-9);
    }

    #[test]
    fn quarter_period_delay_is_quarter_turn() {
        for fs in [48_000, 44_100, 16_000] {
            let a = delayed_sine(fs, 1000.0, 0.0);
            let b = delayed_sine(fs, 1000.0, 0.25e-3);
            let r = phase_delay(&a, &b, 1000.0).unwrap();
            assert!((r.phase_rad - PI / 2.0).abs() < 0.05, "fs {fs}: {}", r.phase_rad);
        }
    }

    #[test]
    fn integer_shift_recovered() {
        let fs = 16_000;
        let a = AudioSignal::chirp(fs, 400.0, 600.0, 1.0, 0.3);
        for k in [-7isize, -2, 3, 9] {
            let mut s = vec![0.0; a.len()];
            for i in 0..a.len() as isize {
                let j = i - k;
                if j >= 0 && (j as usize) < a.len() {
                    s[i as usize] = a.samples[j as usize];
                }
            }
            let b = AudioSignal { sample_rate: fs, samples: s };
            let r = phase_delay(&a, &b, 500.0).unwrap();
            assert!((r.delay_s * fs as f64 - k as f64).abs() <= 1.0, "k {k}: {}", r.delay_s * fs as f64);
        }
    }

    #[test]
    fn off_band_signal_rejected() {
        let a = delayed_sine(16_000, 200.0, 0.0);
        let err = phase_delay(&a, &a, 3000.0).unwrap_err();
        assert!(err.to_string().contains("insufficient energy"));
    }
}
