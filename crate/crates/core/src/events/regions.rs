use super::{EventStream, TimeWindow, VoxelGrid};
use crate::{Error, Result};

/// Per-pixel event counts (both polarities) over a window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u32>,
}

impl CountImage {
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.data[y * self.width + x]
    }

    pub fn total(&self) -> u64 {
        self.data.iter().map(|&c| c as u64).sum()
    }
}

pub fn accumulate_frame(stream: &EventStream, window: TimeWindow) -> Result<CountImage> {
    let window = TimeWindow::new(window.start_us, window.end_us)?;
    let (w, h) = (stream.width as usize, stream.height as usize);
    let mut data = vec![0u32; w * h];
    for e in stream.in_window(window) {
        data[e.y as usize * w + e.x as usize] += 1;
    }
    Ok(CountImage { width: w, height: h, data })
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

/// A patch location: `extent` pixels centred on `center`, the rectangle
/// starting at `center - extent / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionSpec {
    pub center: (i64, i64),
    pub extent: (usize, usize),
    pub id: usize,
}

impl RegionSpec {
    pub fn new(center: (i64, i64), extent: (usize, usize), id: usize) -> Self {
        Self { center, extent, id }
    }

    /// The rectangle, or `None` when any part falls outside `width × height`.
    pub fn rect(&self, width: usize, height: usize) -> Option<Rect> {
        let (pw, ph) = self.extent;
        if pw == 0 || ph == 0 {
            return None;
        }
        let x0 = self.center.0 - (pw / 2) as i64;
        let y0 = self.center.1 - (ph / 2) as i64;
        if x0 < 0 || y0 < 0 || x0 as usize + pw > width || y0 as usize + ph > height {
            return None;
        }
        Some(Rect { x0: x0 as usize, y0: y0 as usize, w: pw, h: ph })
    }

    /// Shrinks the extent to the sensor and slides the centre so the
    /// rectangle fits.
    pub fn clamped(&self, width: usize, height: usize) -> Self {
        let pw = self.extent.0.clamp(1, width);
        let ph = self.extent.1.clamp(1, height);
        let x0 = (self.center.0 - (pw / 2) as i64).clamp(0, (width - pw) as i64);
        let y0 = (self.center.1 - (ph / 2) as i64).clamp(0, (height - ph) as i64);
        Self { center: (x0 + (pw / 2) as i64, y0 + (ph / 2) as i64), extent: (pw, ph), id: self.id }
    }
}

/// Threshold, 8-connected labelling, area filter, count-weighted centroid.
/// Regions come out by descending total count (ties: first pixel in raster
/// order), with ids `0..n`.
pub fn extract_speckle_regions(
    accum: &CountImage,
    min_count: u32,
    min_area: usize,
    patch_extent: (usize, usize),
) -> Result<Vec<RegionSpec>> {
    if min_count < 1 || min_area < 1 {
        return Err(Error::arg("region thresholds must be at least 1"));
    }
    if patch_extent.0 == 0 || patch_extent.1 == 0 {
        return Err(Error::arg("patch extent must be at least 1x1"));
    }
    let (w, h) = (accum.width, accum.height);
    let mut label = vec![usize::MAX; w * h];
    // (total count, first raster index, weighted x, weighted y)
    let mut comps: Vec<(u64, usize, f64, f64)> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if label[start] != usize::MAX || accum.data[start] < min_count {
            continue;
        }
        let id = comps.len();
        let (mut total, mut sx, mut sy, mut area) = (0u64, 0.0, 0.0, 0usize);
        label[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let c = accum.data[i] as u64;
            total += c;
            sx += c as f64 * x as f64;
            sy += c as f64 * y as f64;
            area += 1;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if label[j] == usize::MAX && accum.data[j] >= min_count {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        if area >= min_area {
            comps.push((total, start, sx / total as f64, sy / total as f64));
        } else {
            // keep the id slot consumed so later labels stay unique
            comps.push((0, start, f64::NAN, f64::NAN));
        }
    }
    let mut kept: Vec<_> = comps.into_iter().filter(|c| c.0 > 0).collect();
    kept.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(kept
        .into_iter()
        .enumerate()
        .map(|(id, (_, _, cx, cy))| {
            RegionSpec::new((cx.round() as i64, cy.round() as i64), patch_extent, id).clamped(w, h)
        })
        .collect())
}

/// One cropped patch, `bins × 2 × h × w`, plus where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub region: RegionSpec,
    pub rect: Rect,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl Patch {
    #[inline]
    pub fn get(&self, bin: usize, plane: usize, y: usize, x: usize) -> f64 {
        self.data[((bin * 2 + plane) * self.rect.h + y) * self.rect.w + x]
    }

    pub fn bin_planes(&self, bin: usize) -> (&[f64], &[f64]) {
        let n = self.rect.w * self.rect.h;
        self.data[bin * 2 * n..(bin + 1) * 2 * n].split_at(n)
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub patches: Vec<Patch>,
    pub regions: Vec<RegionSpec>,
    pub window: TimeWindow,
    pub bins: usize,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.bins as f64 / self.window.duration_s()
    }
}

pub fn crop_patches(voxel: &VoxelGrid, regions: &[RegionSpec]) -> Result<PatchSet> {
    if regions.is_empty() {
        return Err(Error::arg("at least one region is required"));
    }
    let mut patches = Vec::with_capacity(regions.len());
    for region in regions {
        let rect = region.rect(voxel.width, voxel.height).ok_or_else(|| {
            Error::arg(format!(
                "region {} (centre {:?}, extent {:?}) outside {}x{} grid",
                region.id, region.center, region.extent, voxel.width, voxel.height
            ))
        })?;
        let mut data = Vec::with_capacity(voxel.bins * 2 * rect.w * rect.h);
        for b in 0..voxel.bins {
            for p in 0..2 {
                for y in rect.y0..rect.y0 + rect.h {
                    let i = voxel.index(b, p, y, rect.x0);
                    data.extend_from_slice(&voxel.data[i..i + rect.w]);
                }
            }
        }
        patches.push(Patch { region: *region, rect, bins: voxel.bins, data });
    }
    Ok(PatchSet { patches, regions: regions.to_vec(), window: voxel.window, bins: voxel.bins })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{voxelize, Event, Polarity};

    /// Independent flood fill used as the oracle for labelling.
    fn brute_components(img: &CountImage, min_count: u32) -> Vec<Vec<(usize, usize)>> {
        let (w, h) = (img.width, img.height);
        let on = |x: usize, y: usize| img.get(x, y) >= min_count;
        let mut seen = vec![false; w * h];
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if seen[y * w + x] || !on(x, y) {
                    continue;
                }
                let mut comp = vec![(x, y)];
                seen[y * w + x] = true;
                let mut changed = true;
                while changed {
                    changed = false;
                    for yy in 0..h {
                        for xx in 0..w {
                            if seen[yy * w + xx] || !on(xx, yy) {
                                continue;
                            }
                            if comp.iter().any(|&(cx, cy)| cx.abs_diff(xx) <= 1 && cy.abs_diff(yy) <= 1) {
                                comp.push((xx, yy));
                                seen[yy * w + xx] = true;
                                changed = true;
                            }
                        }
                    }
                }
                out.push(comp);
            }
        }
        out
    }

    fn blob_image() -> CountImage {
        let (w, h) = (24, 16);
        let mut data = vec![0u32; w * h];
        for y in 3..8 {
            for x in 2..7 {
                data[y * w + x] = 10;
            }
        }
        for y in 9..12 {
            for x in 15..18 {
                data[y * w + x] = 20;
            }
        }
        data[0] = 2; // below threshold noise
        CountImage { width: w, height: h, data }
    }

    #[test]
    fn single_blob_centroid() {
        let mut img = blob_image();
        for y in 9..12 {
            for x in 15..18 {
                img.data[y * img.width + x] = 0;
            }
        }
        let comps = brute_components(&img, 3);
        assert_eq!(comps.len(), 1);
        let regions = extract_speckle_regions(&img, 3, 4, (4, 4)).unwrap();
        assert_eq!(regions.len(), 1);
        let n = comps[0].len() as f64;
        let cx = comps[0].iter().map(|p| p.0 as f64).sum::<f64>() / n;
        let cy = comps[0].iter().map(|p| p.1 as f64).sum::<f64>() / n;
        assert!((regions[0].center.0 as f64 - cx).abs() <= 1.0);
        assert!((regions[0].center.1 as f64 - cy).abs() <= 1.0);
    }

    #[test]
    fn two_blobs_larger_count_first() {
        let img = blob_image();
        assert_eq!(brute_components(&img, 3).len(), 2);
        let regions = extract_speckle_regions(&img, 3, 4, (4, 4)).unwrap();
        assert_eq!(regions.len(), 2);
        // 5x5x10 = 250 vs 3x3x20 = 180
        assert_eq!(regions[0].center, (4, 5));
        assert_eq!(regions[1].center, (16, 10));
        assert_eq!([regions[0].id, regions[1].id], [0, 1]);
    }

    #[test]
    fn nothing_above_threshold() {
        let img = blob_image();
        assert!(extract_speckle_regions(&img, 100, 1, (4, 4)).unwrap().is_empty());
        assert!(extract_speckle_regions(&img, 0, 1, (4, 4)).is_err());
    }

    #[test]
    fn small_components_dropped_and_diagonals_join() {
        let mut data = vec![0u32; 36];
        data[0] = 5;
        data[7] = 5; // diagonal neighbour of (0,0)
        data[5 * 6 + 5] = 5;
        let img = CountImage { width: 6, height: 6, data };
        let r = extract_speckle_regions(&img, 1, 2, (2, 2)).unwrap();
        assert_eq!(r.len(), 1);
    }

    #[test]
    fn regions_near_border_are_clamped() {
        let r = RegionSpec::new((0, 0), (32, 32), 0).clamped(20, 40);
        let rect = r.rect(20, 40).unwrap();
        assert_eq!((rect.x0, rect.y0, rect.w, rect.h), (0, 0, 20, 32));
    }

    #[test]
    fn frame_counts() {
        let s = EventStream::new(
            4,
            4,
            (0..5).map(|i| Event::new(i, 1, 2, Polarity::Positive)).chain([Event::new(9, 0, 0, Polarity::Negative)]).collect(),
        )
        .unwrap();
        let win = TimeWindow::new(0, 100).unwrap();
        let img = accumulate_frame(&s, win).unwrap();
        assert_eq!(img.get(1, 2), 5);
        assert_eq!(img.total(), 6);
        assert_eq!(accumulate_frame(&EventStream::empty(3, 3), win).unwrap().total(), 0);
    }

    #[test]
    fn crops_are_exact() {
        let events: Vec<_> = (0..50u64)
            .map(|i| Event::new(i * 7, (i % 6) as u16, (i % 5) as u16, if i % 3 == 0 { Polarity::Negative } else { Polarity::Positive }))
            .collect();
        let s = EventStream::new(6, 5, events).unwrap();
        let g = voxelize(&s, 8, TimeWindow::new(0, 350).unwrap()).unwrap();

        let whole = crop_patches(&g, &[RegionSpec::new((3, 2), (6, 5), 0)]).unwrap();
        assert_eq!(whole.patches[0].data, g.data);

        let px = crop_patches(&g, &[RegionSpec::new((1, 1), (1, 1), 0)]).unwrap();
        for b in 0..8 {
            for p in 0..2 {
                assert_eq!(px.patches[0].get(b, p, 0, 0), g.get(b, p, 1, 1));
            }
        }

        let disjoint = crop_patches(&g, &[RegionSpec::new((1, 1), (2, 2), 0), RegionSpec::new((4, 3), (2, 2), 1)]).unwrap();
        let sum: f64 = disjoint.patches.iter().map(Patch::total).sum();
        assert!(sum <= g.total() + 1e-12);

        assert!(crop_patches(&g, &[RegionSpec::new((0, 0), (4, 4), 0)]).is_err());
    }
}
