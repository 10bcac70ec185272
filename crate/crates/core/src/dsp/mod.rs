//! Audio analysis, post-processing and evaluation metrics.

mod butterworth;
mod metrics;
mod mel;
mod phase;
mod resample;
mod specsub;
mod stft;
mod stoi;
mod wav;

pub use butterworth::{butterworth_highpass, design_highpass, design_lowpass, filtfilt, sosfilt, Biquad};
pub use metrics::{align, evaluate, snr, AlignedPair, MetricsReport, SNR_CAP_DB};
pub use mel::{hz_to_mel, mel_spectrogram, mel_to_hz, MelFilterbank, MEL_SCALES};
pub use phase::{phase_delay, PhaseDelay};
pub use resample::resample;
pub use specsub::{estimate_noise_profile, estimate_noise_profile_quietest, spectral_subtract, SpectralSubtraction};
pub use stft::{hann, istft, stft, stft_complex, stft_with, Spectrogram};
pub(crate) use stft::plan as fft_forward;
pub use stoi::stoi;
pub use wav::{read_wav, write_wav, write_wav_normalized, write_wav_stereo};
