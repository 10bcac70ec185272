//! Non-learned recovery: Gabor phase tracking and signed-event integration.

mod evphase;
mod gabor;
mod oracle;

pub use evphase::{evphase_phase, evphase_recover, evphase_recover_with, PhaseSignal, DEFAULT_DECAY};
pub use gabor::{gabor_kernel, GaborKernel, GaborParams};
pub use oracle::oracle_recover;

use crate::events::{Rect, RegionSpec, VoxelGrid};
use crate::{Error, Result};

pub(crate) fn region_rect(voxel: &VoxelGrid, region: &RegionSpec) -> Result<Rect> {
    region.rect(voxel.width, voxel.height).ok_or_else(|| {
        Error::arg(format!(
            "region centred at ({}, {}) with extent {}x{} is empty or leaves the {}x{} grid",
            region.center.0, region.center.1, region.extent.0, region.extent.1, voxel.width, voxel.height
        ))
    })
}

/// Signed event image `plane⁺ − plane⁻` of one bin, cropped to `rect`.
pub(crate) fn signed_crop(voxel: &VoxelGrid, bin: usize, rect: Rect) -> Vec<f64> {
    let (pos, neg) = voxel.bin_planes(bin);
    let mut out = Vec::with_capacity(rect.w * rect.h);
    for y in rect.y0..rect.y0 + rect.h {
        let row = y * voxel.width;
        for x in rect.x0..rect.x0 + rect.w {
            out.push(pos[row + x] - neg[row + x]);
        }
    }
    out
}
