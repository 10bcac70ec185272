//! Event-camera sound recovery toolkit.
//!
//! The crate covers the full simulate-and-recover loop:
//!
//! * [`events`]: event records, file formats, voxel grids and speckle patches.
//! * [`sim`]: Gaussian laser-speckle renderer driven by an audio waveform and a
//!   log-intensity threshold event model.
//! * [`classical`]: Gabor phase tracking and direct signed-event integration.
//! * [`learned`]: a small featurizer / attention / state-space recovery model
//!   with hand-written reverse-mode gradients and a two-phase SGD trainer.
//! * [`dsp`]: WAV I/O, STFT and Mel analysis, post-filters and metrics.
//!
//! Data-parallel inner loops run on rayon when the `parallel` feature is on
//! (the default). Every parallel path has a sequential twin selected through
//! [`Execution`], and both produce bit-identical results.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classical;
pub mod dsp;
pub mod error;
pub mod events;
mod exec;
pub mod kv;
pub mod learned;
pub mod signal;
pub mod sim;

pub use error::{Error, Result};
pub use exec::Execution;
pub use signal::AudioSignal;
