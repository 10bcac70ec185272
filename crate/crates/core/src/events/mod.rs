//! Event records and the dense representations built from them.

mod io;
mod regions;
mod voxel;

pub use io::{decode_binary, decode_text, encode_binary, encode_text, read_events, write_events, EventFormat};
pub use regions::{accumulate_frame, crop_patches, extract_speckle_regions, CountImage, Patch, PatchSet, Rect, RegionSpec};
pub use voxel::{voxelize, voxelize_with, TimeWindow, VoxelGrid};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    /// Plane index inside a voxel grid: 0 holds positive events.
    pub fn plane(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

impl TryFrom<i64> for Polarity {
    type Error = &'static str;

    fn try_from(v: i64) -> std::result::Result<Self, Self::Error> {
        match v {
            1 => Ok(Polarity::Positive),
            -1 => Ok(Polarity::Negative),
            _ => Err("invalid polarity"),
        }
    }
}

/// One brightness-change event. Timestamps are integer microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Self { t, x, y, p }
    }

    /// Total order used for deterministic output: time, row, column, polarity.
    pub fn sort_key(&self) -> (u64, u16, u16, Polarity) {
        (self.t, self.y, self.x, self.p)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub events: Vec<Event>,
}

impl EventStream {
    /// Builds a stream, stably sorting by timestamp and checking bounds.
    pub fn new(width: u16, height: u16, mut events: Vec<Event>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg("sensor dimensions must be positive"));
        }
        if let Some(e) = events.iter().find(|e| e.x >= width || e.y >= height) {
            return Err(Error::arg(format!(
                "event at ({}, {}) outside {width}x{height} sensor",
                e.x, e.y
            )));
        }
        if !events.windows(2).all(|w| w[0].t <= w[1].t) {
            events.sort_by_key(|e| e.t);
        }
        Ok(Self { width, height, events })
    }

    pub fn empty(width: u16, height: u16) -> Self {
        Self { width, height, events: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Smallest window `[first, last + 1)` covering every event.
    pub fn span(&self) -> Option<TimeWindow> {
        let first = self.events.first()?.t;
        let last = self.events.last()?.t;
        Some(TimeWindow { start_us: first, end_us: last + 1 })
    }

    /// Events with `start <= t < end`, as a slice of the sorted buffer.
    pub fn in_window(&self, window: TimeWindow) -> &[Event] {
        let lo = self.events.partition_point(|e| e.t < window.start_us);
        let hi = self.events.partition_point(|e| e.t < window.end_us);
        &self.events[lo..hi]
    }

    pub fn count_polarity(&self, p: Polarity) -> usize {
        self.events.iter().filter(|e| e.p == p).count()
    }
}
