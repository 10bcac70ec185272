//! Synthetic data: audio-driven Gaussian speckles observed by a
//! log-intensity threshold event sensor.

mod dataset;
mod generator;
mod scene;

pub use dataset::{make_dataset, read_manifest, DatasetConfig, ManifestRecord};
pub use generator::{frames_to_events, frames_to_events_with, EventGenerator, FrameSequence};
pub use scene::{
    audio_to_displacement, render_frame, render_frame_with, simulate_scene, simulate_scene_with, NoiseConfig,
    Speckle, SpeckleSceneConfig, VibrationTrack, INTENSITY_FLOOR,
};
