use std::f64::consts::PI;

use crate::{AudioSignal, Error, Result};

/// Second-order section `b0 + b1 z⁻¹ + b2 z⁻² / 1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

/// Quality factors of the conjugate pole pairs of an order-`n` prototype.
fn pair_qs(order: usize) -> Vec<f64> {
    (0..order / 2)
        .map(|k| 1.0 / (2.0 * (PI * (2 * k + 1) as f64 / (2 * order) as f64).sin()))
        .collect()
}

fn check(order: usize, cutoff: f64, fs: f64) -> Result<()> {
    if order == 0 {
        return Err(Error::arg("filter order must be at least 1"));
    }
    if !(cutoff > 0.0 && cutoff < fs / 2.0) {
        return Err(Error::arg(format!("cutoff {cutoff} Hz must lie in (0, {} Hz)", fs / 2.0)));
    }
    Ok(())
}

/// Bilinear-transform Butterworth high-pass with pre-warped cutoff.
pub fn design_highpass(order: usize, cutoff: f64, fs: f64) -> Result<Vec<Biquad>> {
    check(order, cutoff, fs)?;
    let k = (PI * cutoff / fs).tan();
    let mut sos: Vec<Biquad> = pair_qs(order)
        .into_iter()
        .map(|q| {
            let norm = 1.0 / (1.0 + k / q + k * k);
            Biquad {
                b: [norm, -2.0 * norm, norm],
                a: [1.0, 2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
            }
        })
        .collect();
    if order % 2 == 1 {
        let norm = 1.0 / (1.0 + k);
        sos.push(Biquad { b: [norm, -norm, 0.0], a: [1.0, (k - 1.0) * norm, 0.0] });
    }
    Ok(sos)
}

pub fn design_lowpass(order: usize, cutoff: f64, fs: f64) -> Result<Vec<Biquad>> {
    check(order, cutoff, fs)?;
    let k = (PI * cutoff / fs).tan();
    let mut sos: Vec<Biquad> = pair_qs(order)
        .into_iter()
        .map(|q| {
            let norm = 1.0 / (1.0 + k / q + k * k);
            let b0 = k * k * norm;
            Biquad { b: [b0, 2.0 * b0, b0], a: [1.0, 2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm] }
        })
        .collect();
    if order % 2 == 1 {
        let norm = 1.0 / (1.0 + k);
        sos.push(Biquad { b: [k * norm, k * norm, 0.0], a: [1.0, (k - 1.0) * norm, 0.0] });
    }
    Ok(sos)
}

/// Cascaded direct-form-II-transposed filtering from rest.
pub fn sosfilt(sos: &[Biquad], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for s in sos {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in y.iter_mut() {
            let input = *v;
            let out = s.b[0] * input + z1;
            z1 = s.b[1] * input - s.a[1] * out + z2;
            z2 = s.b[2] * input - s.a[2] * out;
            *v = out;
        }
    }
    y
}

/// Forward then time-reversed pass: zero phase, squared magnitude response.
pub fn filtfilt(sos: &[Biquad], x: &[f64]) -> Vec<f64> {
    let mut y = sosfilt(sos, x);
    y.reverse();
    let mut y = sosfilt(sos, &y);
    y.reverse();
    y
}

pub fn butterworth_highpass(signal: &AudioSignal, cutoff_hz: f64, order: usize, zero_phase: bool) -> Result<AudioSignal> {
    let sos = design_highpass(order, cutoff_hz, signal.sample_rate as f64)?;
    let samples = if zero_phase { filtfilt(&sos, &signal.samples) } else { sosfilt(&sos, &signal.samples) };
    Ok(AudioSignal { sample_rate: signal.sample_rate, samples })
}
