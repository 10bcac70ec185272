use crate::{Error, Result};

/// A uniformly sampled mono waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl AudioSignal {
    pub fn new(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::arg("sample rate must be at least 1 Hz"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample at index {i}")));
        }
        Ok(Self { sample_rate, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Pure tone `amplitude * sin(2π f t)`.
    pub fn sine(sample_rate: u32, freq_hz: f64, amplitude: f64, duration_s: f64) -> Self {
        let n = (duration_s * sample_rate as f64).round() as usize;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / sample_rate as f64;
                amplitude * (2.0 * std::f64::consts::PI * freq_hz * t).sin()
            })
            .collect();
        Self { sample_rate, samples }
    }

    /// Linear chirp sweeping `f0 → f1` over the duration.
    pub fn chirp(sample_rate: u32, f0: f64, f1: f64, amplitude: f64, duration_s: f64) -> Self {
        let n = (duration_s * sample_rate as f64).round() as usize;
        let k = (f1 - f0) / duration_s;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / sample_rate as f64;
                amplitude * (2.0 * std::f64::consts::PI * (f0 * t + 0.5 * k * t * t)).sin()
            })
            .collect();
        Self { sample_rate, samples }
    }

    /// Value at an arbitrary time by linear interpolation, clamped at the ends.
    pub fn value_at(&self, time_s: f64) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let pos = time_s * self.sample_rate as f64;
        if pos <= 0.0 {
            return self.samples[0];
        }
        let last = self.samples.len() - 1;
        if pos >= last as f64 {
            return self.samples[last];
        }
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        self.samples[i] * (1.0 - frac) + self.samples[i + 1] * frac
    }

    /// Resamples to `rate` by linear interpolation, keeping the duration.
    pub fn resample_linear(&self, rate: u32) -> Result<Self> {
        if rate == 0 {
            return Err(Error::arg("target rate must be at least 1 Hz"));
        }
        let n = (self.samples.len() as u64 * rate as u64 / self.sample_rate as u64) as usize;
        let samples = (0..n).map(|k| self.value_at(k as f64 / rate as f64)).collect();
        Ok(Self { sample_rate: rate, samples })
    }

    pub fn mean_removed(&self) -> Self {
        let mut out = self.clone();
        remove_mean(&mut out.samples);
        out
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }
}

pub(crate) fn remove_mean(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= m);
}

pub(crate) fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
