use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{AudioSignal, Error, Execution, Result};

/// Periodic Hann window (COLA at hop = n/4).
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos()).collect()
}

/// Magnitude STFT, `frames × (window/2 + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Vec<Vec<f64>>,
    pub window: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn bins(&self) -> usize {
        self.window / 2 + 1
    }

    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.window as f64
    }

    /// Frequency of the strongest bin in every frame.
    pub fn peak_track_hz(&self) -> Vec<f64> {
        self.magnitudes
            .iter()
            .map(|f| {
                let k = f
                    .iter()
                    .enumerate()
                    .fold((0, f64::MIN), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0;
                self.bin_hz(k)
            })
            .collect()
    }
}

pub(crate) fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / hop + 1
    }
}

pub(crate) fn plan(n: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_forward(n)
}

fn check(len: usize, window: usize, hop: usize) -> Result<()> {
    if window < 2 || hop == 0 {
        return Err(Error::arg("window must be >= 2 and hop >= 1"));
    }
    if len < window {
        return Err(Error::arg(format!("signal of {len} samples shorter than window {window}")));
    }
    Ok(())
}

/// One-sided complex spectra of Hann-windowed frames.
pub fn stft_complex(samples: &[f64], window: usize, hop: usize, exec: Execution) -> Result<Vec<Vec<Complex64>>> {
    check(samples.len(), window, hop)?;
    let w = hann(window);
    let fft = plan(window);
    let n = frame_count(samples.len(), window, hop);
    Ok(exec.map_range(n, |f| {
        let start = f * hop;
        let mut buf: Vec<Complex64> =
            samples[start..start + window].iter().zip(&w).map(|(x, w)| Complex64::new(x * w, 0.0)).collect();
        fft.process(&mut buf);
        buf.truncate(window / 2 + 1);
        buf
    }))
}

pub fn stft(signal: &AudioSignal, window: usize, hop: usize) -> Result<Spectrogram> {
    stft_with(signal, window, hop, Execution::default())
}

pub fn stft_with(signal: &AudioSignal, window: usize, hop: usize, exec: Execution) -> Result<Spectrogram> {
    let spec = stft_complex(&signal.samples, window, hop, exec)?;
    Ok(Spectrogram {
        magnitudes: spec.into_iter().map(|f| f.into_iter().map(|c| c.norm()).collect()).collect(),
        window,
        hop,
        sample_rate: signal.sample_rate,
    })
}

/// Weighted overlap-add inverse of [`stft_complex`], normalised by the summed
/// squared window. Samples with no window coverage come out as zero.
pub fn istft(frames: &[Vec<Complex64>], window: usize, hop: usize, len: usize) -> Vec<f64> {
    let w = hann(window);
    let inv = FftPlanner::new().plan_fft_inverse(window);
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); window];
    for (f, spec) in frames.iter().enumerate() {
        for k in 0..window {
            buf[k] = if k <= window / 2 { spec[k] } else { spec[window - k].conj() };
        }
        inv.process(&mut buf);
        let start = f * hop;
        for i in 0..window {
            if start + i >= len {
                break;
            }
            out[start + i] += buf[i].re / window as f64 * w[i];
            norm[start + i] += w[i] * w[i];
        }
    }
    out.iter_mut().zip(&norm).for_each(|(o, &n)| {
        if n > 1e-12 {
            *o /= n
        } else {
            *o = 0.0
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_centred_sine_has_one_dominant_bin() {
        let fs = 8000;
        let window = 256;
        let k0 = 20;
        let f = k0 as f64 * fs as f64 / window as f64;
        let s = AudioSignal::sine(fs, f, 1.0, 0.25);
        let spec = stft(&s, window, 64).unwrap();
        assert_eq!(spec.frames(), (s.len() - window) / 64 + 1);
        for frame in &spec.magnitudes {
            let peak = frame[k0];
            for (k, &v) in frame.iter().enumerate() {
                if k.abs_diff(k0) > 1 {
                    assert!(20.0 * (peak / v.max(1e-300)).log10() >= 20.0, "bin {k}");
                }
            }
        }
    }

    #[test]
    fn zeros_and_short_input() {
        let z = AudioSignal::new(1000, vec![0.0; 300]).unwrap();
        assert!(stft(&z, 64, 16).unwrap().magnitudes.iter().flatten().all(|&v| v == 0.0));
        assert!(stft(&z, 512, 16).is_err());
    }

    #[test]
    fn parseval_per_frame() {
        let x: Vec<f64> = (0..2048).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let window = 128;
        let w = hann(window);
        let spec = stft_complex(&x, window, 32, Execution::Sequential).unwrap();
        let mut time_e = 0.0;
        let mut freq_e = 0.0;
        for (f, frame) in spec.iter().enumerate() {
            time_e += (0..window).map(|i| (x[f * 32 + i] * w[i]).powi(2)).sum::<f64>();
            let half: f64 = frame.iter().enumerate().map(|(k, c)| {
                let m = c.norm_sqr();
                if k == 0 || k == window / 2 { m } else { 2.0 * m }
            }).sum();
            freq_e += half / window as f64;
        }
        assert!(((freq_e - time_e) / time_e).abs() < 0.01);
    }

    #[test]
    fn overlap_add_reconstructs_interior() {
        let x: Vec<f64> = (0..1024).map(|i| (i as f64 * 0.37).sin() + 0.1 * (i as f64 * 1.9).cos()).collect();
        let spec = stft_complex(&x, 64, 16, Execution::Sequential).unwrap();
        let y = istft(&spec, 64, 16, x.len());
        for i in 64..960 {
            assert!((x[i] - y[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let s = AudioSignal::chirp(8000, 100.0, 3000.0, 1.0, 0.3);
        assert_eq!(stft_with(&s, 256, 64, Execution::Parallel).unwrap(), stft_with(&s, 256, 64, Execution::Sequential).unwrap());
    }
}
