//! `evmic`: simulate, recover, train, evaluate and plot from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod plot;
mod regions;

/// Usage problems detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "evmic", version, about = "Sound recovery from event-camera recordings of laser speckle")]
pub struct Cli {
    /// Seed for every randomised step; overrides any seed in config files.
    #[arg(long, global = true, env = "EVMIC_SEED")]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a speckle scene driven by a WAV file and write its events.
    Simulate {
        /// Scene file (key = value); the built-in scene when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        audio: PathBuf,
        /// Event file; `.evs` is binary, anything else text.
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth WAV at the frame rate [default: OUT with .truth.wav].
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Seconds of audio to use [default: all].
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Simulate every WAV in a directory with random directions and gains.
    Dataset {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        audio_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Recover audio from an event file.
    Recover {
        #[arg(long)]
        events: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Trained model, required by `--method learned`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// `auto`, or `cx,cy,w,h` boxes separated by `;`.
        #[arg(long, default_value = "auto")]
        regions: String,
        /// Output rate, one voxel bin per sample.
        #[arg(long, default_value_t = 4000)]
        rate: u32,
        /// Patch size `WxH` for automatically found regions.
        #[arg(long, default_value = "32x32")]
        patch: String,
        /// Most regions kept by `--regions auto`.
        #[arg(long, default_value_t = 4)]
        max_regions: usize,
        /// Comma-separated post-filters applied in order: highpass, specsub.
        #[arg(long, value_delimiter = ',')]
        postprocess: Vec<PostFilter>,
        /// Also write the first two regions as a stereo pair.
        #[arg(long)]
        stereo: bool,
        /// Pooled output; per-region files are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the learned model on a dataset manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Loss log CSV [default: OUT with .loss.csv].
        #[arg(long)]
        log: Option<PathBuf>,
        /// Not supported; training always starts from a fresh model.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Compare an estimate against a reference WAV.
    Evaluate {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        /// Reference is speech; adds STOI.
        #[arg(long)]
        speech: bool,
        /// Metrics CSV [default: ESTIMATE with .metrics.csv].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a WAV or event file to a PGM image plus a CSV data dump.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Image path; the CSV goes next to it.
        #[arg(long)]
        out: PathBuf,
        /// STFT window for spectrograms.
        #[arg(long, default_value_t = 256)]
        window: usize,
        #[arg(long, default_value_t = 64)]
        hop: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Evphase,
    Oracle,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    Spectrogram,
    Eventframe,
    Waveform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PostFilter {
    Highpass,
    Specsub,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use evmic_core::Error;
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Empty(_)) => 3,
        Some(Error::Numeric(_)) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
