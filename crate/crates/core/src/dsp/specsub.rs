use rustfft::num_complex::Complex64;

use super::stft::{istft, stft_complex};
use crate::{AudioSignal, Error, Execution, Result};

/// Magnitude-domain spectral subtraction with a spectral floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSubtraction {
    pub window: usize,
    pub hop: usize,
    pub over_subtraction: f64,
    pub floor: f64,
}

impl Default for SpectralSubtraction {
    fn default() -> Self {
        Self { window: 512, hop: 128, over_subtraction: 1.0, floor: 0.02 }
    }
}

impl SpectralSubtraction {
    pub fn bins(&self) -> usize {
        self.window / 2 + 1
    }

    /// Zero padding on both sides so every sample sits under a full set of
    /// overlapping windows, with the tail rounded up to a whole hop.
    fn pad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.window];
        out.extend_from_slice(x);
        out.resize(out.len() + self.window, 0.0);
        let rem = (out.len() - self.window) % self.hop;
        if rem != 0 {
            out.resize(out.len() + self.hop - rem, 0.0);
        }
        out
    }

    pub fn apply(&self, signal: &AudioSignal, noise_profile: &[f64]) -> Result<AudioSignal> {
        if noise_profile.len() != self.bins() {
            return Err(Error::arg(format!(
                "noise profile has {} bins, window {} needs {}",
                noise_profile.len(),
                self.window,
                self.bins()
            )));
        }
        let padded = self.pad(&signal.samples);
        let mut frames = stft_complex(&padded, self.window, self.hop, Execution::default())?;
        Execution::default().for_each_mut(&mut frames, |_, frame| {
            for (c, &n) in frame.iter_mut().zip(noise_profile) {
                let mag = c.norm();
                if mag == 0.0 {
                    continue;
                }
                let cleaned = (mag - self.over_subtraction * n).max(self.floor * mag);
                *c = Complex64::from_polar(cleaned, c.arg());
            }
        });
        let out = istft(&frames, self.window, self.hop, padded.len());
        Ok(AudioSignal { sample_rate: signal.sample_rate, samples: out[self.window..self.window + signal.len()].to_vec() })
    }

    fn frame_magnitudes(&self, signal: &AudioSignal) -> Result<Vec<Vec<f64>>> {
        let frames = stft_complex(&signal.samples, self.window, self.hop, Execution::default())?;
        Ok(frames.into_iter().map(|f| f.into_iter().map(|c| c.norm()).collect()).collect())
    }
}

fn mean_frame(frames: &[&Vec<f64>], bins: usize) -> Vec<f64> {
    let mut out = vec![0.0; bins];
    for f in frames {
        out.iter_mut().zip(f.iter()).for_each(|(o, v)| *o += v);
    }
    out.iter_mut().for_each(|o| *o /= frames.len() as f64);
    out
}

/// Mean magnitude per bin over a noise-only recording.
pub fn estimate_noise_profile(noise: &AudioSignal, params: &SpectralSubtraction) -> Result<Vec<f64>> {
    let mags = params.frame_magnitudes(noise)?;
    Ok(mean_frame(&mags.iter().collect::<Vec<_>>(), params.bins()))
}

/// Mean magnitude over the quietest `fraction` of frames, for recordings with
/// no separate noise-only segment.
pub fn estimate_noise_profile_quietest(signal: &AudioSignal, params: &SpectralSubtraction, fraction: f64) -> Result<Vec<f64>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::arg("fraction must lie in (0, 1]"));
    }
    let mags = params.frame_magnitudes(signal)?;
    let mut order: Vec<(f64, usize)> = mags.iter().enumerate().map(|(i, m)| (m.iter().map(|v| v * v).sum(), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let keep = ((order.len() as f64 * fraction).ceil() as usize).max(1);
    let chosen: Vec<&Vec<f64>> = order[..keep].iter().map(|&(_, i)| &mags[i]).collect();
    Ok(mean_frame(&chosen, params.bins()))
}

pub fn spectral_subtract(signal: &AudioSignal, noise_profile: &[f64]) -> Result<AudioSignal> {
    SpectralSubtraction::default().apply(signal, noise_profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::rms;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn white(n: usize, seed: u64) -> AudioSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 0.1).unwrap();
        AudioSignal { sample_rate: 8000, samples: (0..n).map(|_| d.sample(&mut rng)).collect() }
    }

    #[test]
    fn zero_profile_is_identity() {
        let s = AudioSignal::chirp(8000, 100.0, 3000.0, 0.7, 0.37);
        let out = spectral_subtract(&s, &[0.0; 257]).unwrap();
        let err: Vec<f64> = out.samples.iter().zip(&s.samples).map(|(a, b)| a - b).collect();
        assert_eq!(out.len(), s.len());
        assert!(rms(&err) <= 1e-6, "{}", rms(&err));
    }

    #[test]
    fn white_noise_reduced_by_six_db() {
        let p = SpectralSubtraction::default();
        let profile = estimate_noise_profile(&white(8000, 1), &p).unwrap();
        let noisy = white(8000, 2);
        let out = p.apply(&noisy, &profile).unwrap();
        let drop = 20.0 * (rms(&noisy.samples) / rms(&out.samples)).log10();
        assert!(drop >= 6.0, "{drop}");
    }

    #[test]
    fn huge_profile_leaves_floor_fraction() {
        let s = AudioSignal::sine(8000, 440.0, 1.0, 0.5);
        let out = spectral_subtract(&s, &[1e9; 257]).unwrap();
        let mid = s.len() / 2;
        let ratio = rms(&out.samples[mid - 500..mid + 500]) / rms(&s.samples[mid - 500..mid + 500]);
        assert!((ratio - 0.02).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn mismatched_profile_rejected() {
        let s = AudioSignal::sine(8000, 440.0, 1.0, 0.5);
        assert!(spectral_subtract(&s, &[0.0; 100]).is_err());
    }

    #[test]
    fn quietest_frames_pick_noise() {
        let p = SpectralSubtraction::default();
        let mut s = white(16000, 3);
        for v in &mut s.samples[8000..] {
            *v *= 10.0;
        }
        let quiet = estimate_noise_profile_quietest(&s, &p, 0.2).unwrap();
        let noise_only = estimate_noise_profile(&AudioSignal { sample_rate: 8000, samples: s.samples[..7000].to_vec() }, &p).unwrap();
        let (a, b): (f64, f64) = (quiet.iter().sum(), noise_only.iter().sum());
        assert!((a / b - 1.0).abs() < 0.2);
    }
}
