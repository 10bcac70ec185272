use rustfft::num_complex::Complex64;

use super::gabor::{gabor_kernel, GaborKernel, GaborParams};
use super::{region_rect, signed_crop};
use crate::events::{RegionSpec, VoxelGrid};
use crate::signal::remove_mean;
use crate::{AudioSignal, Execution, Result};

/// Per-bin retention of the running event response.
pub const DEFAULT_DECAY: f64 = 0.9;

/// Bins handled per parallel task; each task recomputes one extra response
/// at its left edge so tasks stay independent.
const CHUNK: usize = 64;

/// Per-bin retention of the count-image average used as the static reference.
const REFERENCE_RETENTION: f64 = 0.98;

/// The averaged count image is scaled to this many bins of events, which keeps
/// the reference well above the decaying signed response.
const REFERENCE_BINS: f64 = 1024.0;

/// Unwrapped mean phase per bin and the total response magnitude behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSignal {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
    pub sample_rate: f64,
}

impl PhaseSignal {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Bin-to-bin phase increments, the first taken against the reference.
    pub fn increments(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.values
            .iter()
            .map(|&v| {
                let d = v - prev;
                prev = v;
                d
            })
            .collect()
    }
}

/// Zero-padded "same" convolution of a real `w × h` field with the kernel.
fn convolve(field: &[f64], w: usize, h: usize, k: &GaborKernel) -> Vec<Complex64> {
    let half = (k.n / 2) as isize;
    let mut out = vec![Complex64::new(0.0, 0.0); w * h];
    for (sy, row) in field.chunks(w).enumerate() {
        for (sx, &v) in row.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for ky in 0..k.n {
                let y = sy as isize + ky as isize - half;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for kx in 0..k.n {
                    let x = sx as isize + kx as isize - half;
                    if x < 0 || x >= w as isize {
                        continue;
                    }
                    out[y as usize * w + x as usize] += k.get(kx, ky) * v;
                }
            }
        }
    }
    out
}

/// Amplitude-weighted mean of the wrapped per-pixel phase change from
/// `prev` to `cur`, weighted by `|cur|`, plus the total weight.
fn mean_increment(prev: &[Complex64], cur: &[Complex64]) -> (f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    for (p, c) in prev.iter().zip(cur) {
        let a = c.norm();
        if a == 0.0 || p.norm() == 0.0 {
            den += a;
            continue;
        }
        let mut d = (c * p.conj()).arg();
        if d <= -std::f64::consts::PI {
            d += 2.0 * std::f64::consts::PI;
        }
        num += a * d;
        den += a;
    }
    (if den > 0.0 { num / den } else { 0.0 }, den)
}

/// Gabor phase track of the event activity inside `region`.
///
/// The response at bin `t` is the kernel applied to a quasi-intensity
/// reference (a slowly updated average of the region's event count image) plus
/// an exponentially decaying sum of signed event images. Everything is causal,
/// so a bin never depends on later events. The per-bin value is the
/// amplitude-weighted mean wrapped phase change against the previous bin.
pub fn evphase_phase(voxel: &VoxelGrid, params: &GaborParams, region: &RegionSpec, decay: f64, exec: Execution) -> Result<PhaseSignal> {
    if !(0.0..1.0).contains(&decay) {
        return Err(crate::Error::arg(format!("decay must lie in [0, 1), got {decay}")));
    }
    let kernel = gabor_kernel(params)?;
    let rect = region_rect(voxel, region)?;
    let (w, h) = (rect.w, rect.h);
    // field_t = reference_t + Σ_k decay^(t−k) E_k, where reference_t is a
    // bias-corrected running average of the total count image
    let mut fields = Vec::with_capacity(voxel.bins);
    let mut average = vec![0.0; w * h];
    let mut running = vec![0.0; w * h];
    let mut base = Vec::new();
    let mut retained = 1.0;
    for b in 0..voxel.bins {
        let (pos, neg) = voxel.bin_planes(b);
        retained *= REFERENCE_RETENTION;
        let scale = REFERENCE_BINS / (1.0 - retained);
        for y in 0..h {
            let row = (rect.y0 + y) * voxel.width + rect.x0;
            for x in 0..w {
                let a = &mut average[y * w + x];
                *a = REFERENCE_RETENTION * *a + (1.0 - REFERENCE_RETENTION) * (pos[row + x] + neg[row + x]);
            }
        }
        let reference: Vec<f64> = average.iter().map(|a| a * scale).collect();
        if b == 0 {
            base = convolve(&reference, w, h, &kernel);
        }
        let e = signed_crop(voxel, b, rect);
        running.iter_mut().zip(&e).for_each(|(r, e)| *r = decay * *r + e);
        fields.push(reference.iter().zip(&running).map(|(a, b)| a + b).collect::<Vec<f64>>());
    }
    let chunks = voxel.bins.div_ceil(CHUNK);
    let parts = exec.map_range(chunks, |c| {
        let start = c * CHUNK;
        let end = (start + CHUNK).min(voxel.bins);
        let mut prev = if start == 0 { base.clone() } else { convolve(&fields[start - 1], w, h, &kernel) };
        let mut out = Vec::with_capacity(end - start);
        for field in &fields[start..end] {
            let cur = convolve(field, w, h, &kernel);
            out.push(mean_increment(&prev, &cur));
            prev = cur;
        }
        out
    });
    let mut values = Vec::with_capacity(voxel.bins);
    let mut weights = Vec::with_capacity(voxel.bins);
    let mut phase = 0.0;
    for (inc, weight) in parts.into_iter().flatten() {
        phase += inc;
        values.push(phase);
        weights.push(weight);
    }
    Ok(PhaseSignal { values, weights, sample_rate: voxel.sample_rate() })
}

pub fn evphase_recover(voxel: &VoxelGrid, params: &GaborParams, region: &RegionSpec) -> Result<AudioSignal> {
    evphase_recover_with(voxel, params, region, DEFAULT_DECAY, Execution::default())
}

/// Mean-removed per-bin phase increments at the voxel bin rate.
pub fn evphase_recover_with(
    voxel: &VoxelGrid,
    params: &GaborParams,
    region: &RegionSpec,
    decay: f64,
    exec: Execution,
) -> Result<AudioSignal> {
    let phase = evphase_phase(voxel, params, region, decay, exec)?;
    let mut samples = phase.increments();
    remove_mean(&mut samples);
    Ok(AudioSignal { sample_rate: voxel.sample_rate().round().max(1.0) as u32, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::TimeWindow;

    /// Blob whose vertical position follows `offset(b)`, rendered as signed
    /// differences of consecutive frames split into the two planes.
    fn moving_blob(bins: usize, offset: impl Fn(usize) -> f64) -> VoxelGrid {
        let (w, h) = (24, 24);
        let mut v = VoxelGrid::zeros(bins, w, h, TimeWindow::new(0, bins as u64 * 250).unwrap());
        let frame = |o: f64| -> Vec<f64> {
            (0..w * h)
                .map(|i| {
                    let (x, y) = ((i % w) as f64 - 12.0, (i / w) as f64 - 12.0 - o);
                    20.0 * (-(x * x + y * y) / 18.0).exp()
                })
                .collect()
        };
        let mut prev = frame(offset(0));
        for b in 0..bins {
            let cur = frame(offset(b));
            for i in 0..w * h {
                let d = cur[i] - prev[i];
                let (pi, ni) = (v.index(b, 0, i / w, i % w), v.index(b, 1, i / w, i % w));
                if d > 0.0 {
                    v.data[pi] = d;
                } else {
                    v.data[ni] = -d;
                }
            }
            prev = cur;
        }
        v
    }

    #[test]
    fn zero_voxel_gives_zero_signal() {
        let v = VoxelGrid::zeros(50, 20, 20, TimeWindow::new(0, 12_500).unwrap());
        let s = evphase_recover(&v, &GaborParams::default(), &RegionSpec::new((10, 10), (16, 16), 0)).unwrap();
        assert_eq!(s.samples, vec![0.0; 50]);
        assert_eq!(s.sample_rate, 4000);
    }

    #[test]
    fn tracks_a_tone() {
        let bins = 800;
        let v = moving_blob(bins, |b| 0.3 * (2.0 * std::f64::consts::PI * 440.0 * b as f64 / 4000.0).sin());
        let s = evphase_recover(&v, &GaborParams::default(), &RegionSpec::new((12, 12), (20, 20), 0)).unwrap();
        assert_eq!(s.len(), bins);
        let spec = crate::dsp::stft(&s, 512, 512).unwrap();
        let peak = spec.peak_track_hz()[0];
        assert!((peak - 440.0).abs() <= 4000.0 / 512.0, "{peak}");
    }

    #[test]
    fn parallel_matches_sequential_bitwise() {
        let v = moving_blob(300, |b| 0.4 * (b as f64 * 0.3).sin());
        let r = RegionSpec::new((12, 12), (16, 16), 0);
        let p = GaborParams::default();
        let a = evphase_recover_with(&v, &p, &r, 0.9, Execution::Sequential).unwrap();
        let b = evphase_recover_with(&v, &p, &r, 0.9, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ignores_events_outside_region() {
        let v = moving_blob(100, |b| 0.4 * (b as f64 * 0.5).sin());
        let r = RegionSpec::new((12, 12), (10, 10), 0);
        let mut noisy = v.clone();
        for b in 0..100 {
            for (x, y) in [(0, 0), (23, 23), (2, 20)] {
                let i = noisy.index(b, b % 2, y, x);
                noisy.data[i] += 3.0;
            }
        }
        let p = GaborParams::default();
        assert_eq!(evphase_recover(&v, &p, &r).unwrap(), evphase_recover(&noisy, &p, &r).unwrap());
    }

    #[test]
    fn bad_inputs_rejected() {
        let v = VoxelGrid::zeros(5, 8, 8, TimeWindow::new(0, 100).unwrap());
        let p = GaborParams::default();
        assert!(evphase_recover(&v, &p, &RegionSpec::new((4, 4), (0, 0), 0)).is_err());
        assert!(evphase_recover(&v, &p, &RegionSpec::new((7, 7), (6, 6), 0)).is_err());
        assert!(evphase_recover_with(&v, &p, &RegionSpec::new((4, 4), (4, 4), 0), 1.0, Execution::Sequential).is_err());
        assert!(evphase_recover(&v, &GaborParams { n: 4, ..p }, &RegionSpec::new((4, 4), (4, 4), 0)).is_err());
    }
}
