use nalgebra::{DMatrix, DVector};

use crate::events::{Patch, PatchSet};
use crate::{Error, Execution, Result};

/// Width of the per-bin statistic vector.
pub const STAT_DIM: usize = 6;

/// Per-patch, per-bin event statistics
/// `[m⁺, m⁻, x̄⁺ − cx, ȳ⁺ − cy, x̄⁻ − cx, ȳ⁻ − cy]`, indexed `[patch][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchStats {
    pub values: Vec<Vec<[f64; STAT_DIM]>>,
}

impl PatchStats {
    pub fn patches(&self) -> usize {
        self.values.len()
    }

    pub fn bins(&self) -> usize {
        self.values.first().map_or(0, |p| p.len())
    }
}

/// Learned features `f_{i,t} ∈ R^C`, indexed `[patch][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatures {
    pub values: Vec<Vec<DVector<f64>>>,
}

impl PatchFeatures {
    pub fn patches(&self) -> usize {
        self.values.len()
    }

    pub fn bins(&self) -> usize {
        self.values.first().map_or(0, |p| p.len())
    }

    pub fn channels(&self) -> usize {
        self.values.first().and_then(|p| p.first()).map_or(0, |v| v.len())
    }
}

fn bin_stats(patch: &Patch, bin: usize) -> [f64; STAT_DIM] {
    let (pos, neg) = patch.bin_planes(bin);
    let (w, h) = (patch.rect.w, patch.rect.h);
    let (cx, cy) = ((w / 2) as f64, (h / 2) as f64);
    let mut s = [0.0; STAT_DIM];
    for (plane, data) in [pos, neg].into_iter().enumerate() {
        let (mut m, mut mx, mut my) = (0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let v = data[y * w + x];
                if v != 0.0 {
                    m += v;
                    mx += v * x as f64;
                    my += v * y as f64;
                }
            }
        }
        s[plane] = m;
        if m != 0.0 {
            s[2 + 2 * plane] = mx / m - cx;
            s[3 + 2 * plane] = my / m - cy;
        }
    }
    s
}

/// Event mass and mass-weighted centroid offset per polarity. Offsets are
/// relative to the region centre and zero when the polarity has no mass.
pub fn patch_statistics(patches: &PatchSet) -> PatchStats {
    patch_statistics_with(patches, Execution::default())
}

pub fn patch_statistics_with(patches: &PatchSet, exec: Execution) -> PatchStats {
    PatchStats { values: exec.map(&patches.patches, |p| (0..p.bins).map(|b| bin_stats(p, b)).collect()) }
}

/// `f = W s` with `W` of shape `C × 6`; no bias, so empty bins stay zero.
pub fn featurize(stats: &PatchStats, weights: &DMatrix<f64>) -> Result<PatchFeatures> {
    if weights.ncols() != STAT_DIM {
        return Err(Error::arg(format!("featurizer needs {STAT_DIM} input columns, got {}", weights.ncols())));
    }
    Ok(PatchFeatures {
        values: stats
            .values
            .iter()
            .map(|p| p.iter().map(|s| weights * DVector::from_column_slice(s)).collect())
            .collect(),
    })
}

pub fn extract_patch_features(patches: &PatchSet, weights: &DMatrix<f64>) -> Result<PatchFeatures> {
    featurize(&patch_statistics(patches), weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{crop_patches, RegionSpec, TimeWindow, VoxelGrid};

    fn voxel() -> VoxelGrid {
        VoxelGrid::zeros(6, 16, 16, TimeWindow::new(0, 600).unwrap())
    }

    #[test]
    fn single_event_statistics() {
        let mut v = voxel();
        let i = v.index(3, 0, 8, 10);
        v.data[i] = 1.0;
        let set = crop_patches(&v, &[RegionSpec::new((8, 8), (8, 8), 0)]).unwrap();
        let s = patch_statistics(&set);
        assert_eq!(s.values[0][3], [1.0, 0.0, 2.0, 0.0, 0.0, 0.0]);
        for b in [0, 1, 2, 4, 5] {
            assert_eq!(s.values[0][b], [0.0; 6]);
        }
    }

    #[test]
    fn empty_patches_give_zero_features() {
        let set = crop_patches(&voxel(), &[RegionSpec::new((8, 8), (8, 8), 0), RegionSpec::new((4, 4), (4, 4), 1)]).unwrap();
        let w = DMatrix::from_fn(5, 6, |i, j| (i * 6 + j) as f64 - 7.0);
        let f = extract_patch_features(&set, &w).unwrap();
        assert_eq!((f.patches(), f.bins(), f.channels()), (2, 6, 5));
        assert!(f.values.iter().flatten().all(|v| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn doubling_mass_keeps_centroids() {
        let mut v = voxel();
        for (b, p, y, x, m) in [(1, 0, 6, 7, 0.5), (1, 0, 9, 9, 1.5), (2, 1, 4, 11, 2.0), (2, 0, 5, 5, 0.25)] {
            let i = v.index(b, p, y, x);
            v.data[i] = m;
        }
        let r = [RegionSpec::new((8, 8), (10, 10), 0)];
        let a = patch_statistics(&crop_patches(&v, &r).unwrap());
        let b = patch_statistics(&crop_patches(&v.scaled(2.0), &r).unwrap());
        for (sa, sb) in a.values[0].iter().zip(&b.values[0]) {
            assert_eq!(sb[0], 2.0 * sa[0]);
            assert_eq!(sb[1], 2.0 * sa[1]);
            for k in 2..6 {
                assert!((sb[k] - sa[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wrong_weight_shape_rejected() {
        let set = crop_patches(&voxel(), &[RegionSpec::new((8, 8), (8, 8), 0)]).unwrap();
        assert!(extract_patch_features(&set, &DMatrix::zeros(4, 5)).is_err());
    }
}
