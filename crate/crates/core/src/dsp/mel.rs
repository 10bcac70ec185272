use super::stft::stft;
use crate::{AudioSignal, Error, Result};

/// Analysis scales of the multi-resolution spectral loss.
pub const MEL_SCALES: [usize; 4] = [64, 128, 256, 512];

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the HTK Mel scale, peak weight 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub bands: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub centers_hz: Vec<f64>,
    /// `bands × (n_fft/2 + 1)`.
    pub weights: Vec<Vec<f64>>,
}

impl MelFilterbank {
    pub fn new(bands: usize, n_fft: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Result<Self> {
        if bands == 0 || n_fft < 2 {
            return Err(Error::arg("need at least one band and n_fft >= 2"));
        }
        if !(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate as f64 / 2.0 + 1e-9) {
            return Err(Error::arg("mel range must satisfy 0 <= fmin < fmax <= fs/2"));
        }
        let (m0, m1) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..bands + 2).map(|i| mel_to_hz(m0 + (m1 - m0) * i as f64 / (bands + 1) as f64)).collect();
        let bins = n_fft / 2 + 1;
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let weights = (0..bands)
            .map(|b| {
                let (lo, c, hi) = (edges[b], edges[b + 1], edges[b + 2]);
                (0..bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f > lo && f <= c {
                            (f - lo) / (c - lo)
                        } else if f > c && f < hi {
                            (hi - f) / (hi - c)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self { bands, fmin, fmax, centers_hz: edges[1..=bands].to_vec(), weights })
    }

    pub fn apply(&self, magnitudes: &[f64]) -> Vec<f64> {
        self.weights.iter().map(|w| w.iter().zip(magnitudes).map(|(a, b)| a * b).sum()).collect()
    }
}

/// Mel-band magnitudes (`frames × bands`) with window `scale`, hop `scale/4`,
/// over `0..fs/2`.
pub fn mel_spectrogram(signal: &AudioSignal, scale: usize, bands: usize) -> Result<Vec<Vec<f64>>> {
    let spec = stft(signal, scale, (scale / 4).max(1))?;
    let fb = MelFilterbank::new(bands, scale, signal.sample_rate, 0.0, signal.sample_rate as f64 / 2.0)?;
    Ok(spec.magnitudes.iter().map(|m| fb.apply(m)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_set_is_two_to_six_through_nine() {
        assert_eq!(MEL_SCALES, [1 << 6, 1 << 7, 1 << 8, 1 << 9]);
    }

    #[test]
    fn centers_strictly_increase_and_weights_nonnegative() {
        let fb = MelFilterbank::new(64, 512, 16_000, 0.0, 8000.0).unwrap();
        assert!(fb.centers_hz.windows(2).all(|w| w[0] < w[1]));
        assert!(fb.weights.iter().flatten().all(|&w| w >= 0.0));
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn silence_is_zero() {
        let z = AudioSignal::new(4000, vec![0.0; 1024]).unwrap();
        for s in MEL_SCALES {
            assert!(mel_spectrogram(&z, s, 64).unwrap().iter().flatten().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn tone_at_band_centre_wins_its_band() {
        let fb = MelFilterbank::new(64, 512, 16_000, 0.0, 8000.0).unwrap();
        for band in [30, 40, 55] {
            let tone = AudioSignal::sine(16_000, fb.centers_hz[band], 1.0, 0.2);
            let mel = mel_spectrogram(&tone, 512, 64).unwrap();
            for frame in &mel {
                let arg = frame.iter().enumerate().fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0;
                assert_eq!(arg, band);
            }
        }
    }
}
