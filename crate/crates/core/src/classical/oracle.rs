use super::{region_rect, signed_crop};
use crate::events::{RegionSpec, VoxelGrid};
use crate::signal::remove_mean;
use crate::{AudioSignal, Result};

/// Cumulative sum of the per-bin signed event count inside `region`,
/// mean-removed. Each event stands for one threshold step of log intensity,
/// so the running sum follows the displacement up to sign, scale and offset.
pub fn oracle_recover(voxel: &VoxelGrid, region: &RegionSpec) -> Result<AudioSignal> {
    let rect = region_rect(voxel, region)?;
    let mut acc = 0.0;
    let mut samples: Vec<f64> = (0..voxel.bins)
        .map(|b| {
            acc += signed_crop(voxel, b, rect).iter().sum::<f64>();
            acc
        })
        .collect();
    remove_mean(&mut samples);
    Ok(AudioSignal { sample_rate: voxel.sample_rate().round().max(1.0) as u32, samples })
}
