use super::{Event, EventStream};
use crate::{Error, Execution, Result};

/// Half-open interval `[start_us, end_us)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeWindow {
    pub start_us: u64,
    pub end_us: u64,
}

impl TimeWindow {
    pub fn new(start_us: u64, end_us: u64) -> Result<Self> {
        if start_us >= end_us {
            return Err(Error::arg(format!("empty window [{start_us}, {end_us})")));
        }
        Ok(Self { start_us, end_us })
    }

    pub fn span_us(&self) -> u64 {
        self.end_us - self.start_us
    }

    pub fn duration_s(&self) -> f64 {
        self.span_us() as f64 * 1e-6
    }

    pub fn shifted(&self, offset_us: u64) -> Self {
        Self { start_us: self.start_us + offset_us, end_us: self.end_us + offset_us }
    }
}

/// Dense `bins × 2 × height × width` event tensor. Plane 0 holds positive
/// events, plane 1 negative ones.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub bins: usize,
    pub width: usize,
    pub height: usize,
    pub window: TimeWindow,
    pub data: Vec<f64>,
}

impl VoxelGrid {
    pub fn zeros(bins: usize, width: usize, height: usize, window: TimeWindow) -> Self {
        Self { bins, width, height, window, data: vec![0.0; bins * 2 * width * height] }
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn bin_len(&self) -> usize {
        2 * self.plane_len()
    }

    #[inline]
    pub fn index(&self, bin: usize, plane: usize, y: usize, x: usize) -> usize {
        ((bin * 2 + plane) * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, bin: usize, plane: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(bin, plane, y, x)]
    }

    /// `(positive, negative)` planes of one bin.
    pub fn bin_planes(&self, bin: usize) -> (&[f64], &[f64]) {
        let n = self.plane_len();
        let s = &self.data[bin * 2 * n..(bin + 1) * 2 * n];
        s.split_at(n)
    }

    pub fn plane_total(&self, plane: usize) -> f64 {
        (0..self.bins).map(|b| {
            let (pos, neg) = self.bin_planes(b);
            if plane == 0 { pos.iter().sum::<f64>() } else { neg.iter().sum::<f64>() }
        }).sum()
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Output rate of per-bin signals: bins per second.
    pub fn sample_rate(&self) -> f64 {
        self.bins as f64 / self.window.duration_s()
    }

    pub fn bin_width_us(&self) -> f64 {
        self.window.span_us() as f64 / self.bins as f64
    }

    /// Time at which bin `b` is sampled by the interpolation kernel.
    pub fn bin_time_us(&self, b: usize) -> f64 {
        if self.bins < 2 {
            return self.window.start_us as f64;
        }
        self.window.start_us as f64 + b as f64 * self.window.span_us() as f64 / (self.bins - 1) as f64
    }

    /// Swaps the two polarity planes.
    pub fn polarity_flipped(&self) -> Self {
        let mut out = self.clone();
        let n = self.plane_len();
        for chunk in out.data.chunks_mut(2 * n) {
            let (a, b) = chunk.split_at_mut(n);
            a.swap_with_slice(b);
        }
        out
    }

    /// Elementwise sum of two grids with identical shape.
    pub fn try_add(&self, other: &Self) -> Result<Self> {
        if (self.bins, self.width, self.height) != (other.bins, other.width, other.height) {
            return Err(Error::arg("voxel grid shapes differ"));
        }
        let mut out = self.clone();
        out.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(out)
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= k);
        out
    }
}

/// Left bin and right-bin weight for an event, exact in integer arithmetic.
#[inline]
fn deposit(t: u64, window: TimeWindow, bins: usize) -> (usize, f64) {
    let span = window.span_us() as u128;
    let num = (t - window.start_us) as u128 * (bins as u128 - 1);
    let left = (num / span) as usize;
    let frac = (num % span) as f64 / span as f64;
    (left, frac)
}

/// Voxelizes with the default [`Execution`].
pub fn voxelize(stream: &EventStream, bins: usize, window: TimeWindow) -> Result<VoxelGrid> {
    voxelize_with(stream, bins, window, Execution::default())
}

/// Each event in `window` deposits unit mass at its pixel, split linearly
/// between the two bins around `t* = (t - start) / (end - start) * (bins - 1)`.
///
/// Bins are filled independently (one slab per bin) scanning the time-sorted
/// events, so the parallel and sequential paths add contributions to every
/// cell in the same order.
pub fn voxelize_with(stream: &EventStream, bins: usize, window: TimeWindow, exec: Execution) -> Result<VoxelGrid> {
    if bins == 0 {
        return Err(Error::arg("bin count must be at least 1"));
    }
    let window = TimeWindow::new(window.start_us, window.end_us)?;
    let (w, h) = (stream.width as usize, stream.height as usize);
    let mut grid = VoxelGrid::zeros(bins, w, h, window);
    let events: &[Event] = stream.in_window(window);
    if events.is_empty() {
        return Ok(grid);
    }
    let deposits: Vec<(usize, f64)> = exec.map(events, |e| deposit(e.t, window, bins));
    let plane = w * h;
    exec.for_each_chunk_mut(&mut grid.data, 2 * plane, |b, slab| {
        let lo = deposits.partition_point(|d| d.0 + 1 < b);
        let hi = deposits.partition_point(|d| d.0 <= b);
        for (e, &(left, frac)) in events[lo..hi].iter().zip(&deposits[lo..hi]) {
            let weight = if left == b { 1.0 - frac } else { frac };
            slab[e.p.plane() * plane + e.y as usize * w + e.x as usize] += weight;
        }
    });
    Ok(grid)
}
