use std::f64::consts::PI;

use crate::{AudioSignal, Error, Execution, Result};

/// Zero crossings of the interpolation kernel on each side, at the narrower
/// of the two rates.
const HALF_TAPS: f64 = 16.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling with a Hann-windowed sinc kernel. The cutoff sits
/// at the lower Nyquist frequency so downsampling does not alias.
pub fn resample(signal: &AudioSignal, rate: u32) -> Result<AudioSignal> {
    if rate == 0 {
        return Err(Error::arg("target rate must be at least 1 Hz"));
    }
    if rate == signal.sample_rate {
        return Ok(signal.clone());
    }
    let ratio = rate as f64 / signal.sample_rate as f64;
    let fc = ratio.min(1.0);
    let half = (HALF_TAPS / fc).ceil();
    let x = &signal.samples;
    let n_out = (x.len() as f64 * ratio).round() as usize;
    let samples = Execution::default().map_range(n_out, |i| {
        let t = i as f64 / ratio;
        let lo = (t - half).ceil().max(0.0) as usize;
        let hi = ((t + half).floor() as usize).min(x.len().saturating_sub(1));
        let mut acc = 0.0;
        for (k, &v) in x.iter().enumerate().take(hi + 1).skip(lo) {
            let u = t - k as f64;
            let w = 0.5 * (1.0 + (PI * u / half).cos());
            acc += v * fc * sinc(fc * u) * w;
        }
        acc
    });
    Ok(AudioSignal { sample_rate: rate, samples })
}
