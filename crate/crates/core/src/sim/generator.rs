use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::scene::{NoiseConfig, INTENSITY_FLOOR};
use crate::events::{Event, EventStream, Polarity};
use crate::{Error, Execution, Result};

/// Slack on threshold comparisons so that a log step of exactly `k·C`
/// yields `k` events despite rounding.
const CROSSING_EPS: f64 = 1e-9;

/// Uniformly spaced intensity frames in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub width: u16,
    pub height: u16,
    pub frame_rate: f64,
    pub frames: Vec<Vec<f64>>,
}

struct PixelState {
    reference: f64,
    prev_log: f64,
    threshold: f64,
    rng: Option<Box<ChaCha8Rng>>,
    events: Vec<Event>,
}

/// Streaming reference-level event model.
///
/// Each pixel keeps a log-intensity reference `R`, initialised from the first
/// frame. On every new frame it emits `+1` and raises `R` by the threshold
/// while `log I - R >= C`, and symmetrically for `-1`. Event times are
/// interpolated linearly in log intensity between the two frame times.
pub struct EventGenerator {
    width: u16,
    height: u16,
    frame_rate: f64,
    threshold: f64,
    noise: NoiseConfig,
    seed: u64,
    exec: Execution,
    frames_seen: usize,
    pixels: Vec<PixelState>,
}

impl EventGenerator {
    pub fn new(width: u16, height: u16, frame_rate: f64, threshold: f64, noise: NoiseConfig, seed: u64) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(Error::arg("threshold must be positive"));
        }
        if !(frame_rate > 0.0) {
            return Err(Error::arg("frame rate must be positive"));
        }
        if width == 0 || height == 0 {
            return Err(Error::arg("sensor dimensions must be positive"));
        }
        if noise.leak_event_rate < 0.0 || noise.threshold_jitter_sigma < 0.0 {
            return Err(Error::arg("noise parameters must be non-negative"));
        }
        Ok(Self {
            width,
            height,
            frame_rate,
            threshold,
            noise,
            seed,
            exec: Execution::default(),
            frames_seen: 0,
            pixels: Vec::new(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    fn frame_time_us(&self, k: usize) -> f64 {
        k as f64 * 1e6 / self.frame_rate
    }

    fn pixel_rng(seed: u64, stream: u64) -> Box<ChaCha8Rng> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Box::new(rng)
    }

    pub fn push_frame(&mut self, frame: &[f64]) -> Result<()> {
        let (w, h) = (self.width as usize, self.height as usize);
        if frame.len() != w * h {
            return Err(Error::arg(format!("frame has {} pixels, expected {}", frame.len(), w * h)));
        }
        let (c, jitter, seed) = (self.threshold, self.noise.threshold_jitter_sigma, self.seed);
        let draw = move |rng: &mut Option<Box<ChaCha8Rng>>, idx: usize| -> f64 {
            if jitter == 0.0 {
                return c;
            }
            let r = rng.get_or_insert_with(|| Self::pixel_rng(seed, idx as u64));
            let n = Normal::new(c, jitter).expect("finite jitter");
            n.sample(r.as_mut()).max(0.1 * c)
        };
        if self.frames_seen == 0 {
            self.pixels = frame
                .iter()
                .enumerate()
                .map(|(idx, &v)| {
                    let l = v.clamp(INTENSITY_FLOOR, 1.0).ln();
                    let mut rng = None;
                    let threshold = draw(&mut rng, idx);
                    PixelState { reference: l, prev_log: l, threshold, rng, events: Vec::new() }
                })
                .collect();
            self.frames_seen = 1;
            return Ok(());
        }
        let t0 = self.frame_time_us(self.frames_seen - 1);
        let t1 = self.frame_time_us(self.frames_seen);
        self.exec.for_each_mut(&mut self.pixels, |idx, st| {
            let l = frame[idx].clamp(INTENSITY_FLOOR, 1.0).ln();
            let (x, y) = ((idx % w) as u16, (idx / w) as u16);
            loop {
                let diff = l - st.reference;
                let p = if diff >= st.threshold - CROSSING_EPS {
                    st.reference += st.threshold;
                    Polarity::Positive
                } else if diff <= -st.threshold + CROSSING_EPS {
                    st.reference -= st.threshold;
                    Polarity::Negative
                } else {
                    break;
                };
                let span = l - st.prev_log;
                let frac = if span.abs() > 0.0 { ((st.reference - st.prev_log) / span).clamp(0.0, 1.0) } else { 1.0 };
                let t = (t0 + frac * (t1 - t0)).round() as u64;
                st.events.push(Event { t, x, y, p });
                st.threshold = draw(&mut st.rng, idx);
            }
            st.prev_log = l;
        });
        self.frames_seen += 1;
        Ok(())
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    /// Adds leak events, merges all pixels and sorts by `(t, y, x, p)`.
    pub fn finish(mut self) -> EventStream {
        let (w, rate, seed) = (self.width as usize, self.noise.leak_event_rate, self.seed);
        let n_pix = self.pixels.len();
        let duration_s = self.frame_time_us(self.frames_seen.saturating_sub(1)) * 1e-6;
        if rate > 0.0 && duration_s > 0.0 {
            let leaks: Vec<Vec<Event>> = self.exec.map_range(n_pix, |idx| {
                let mut rng = Self::pixel_rng(seed, (n_pix + idx) as u64);
                let exp = Exp::new(rate).expect("positive rate");
                let mut t = 0.0;
                let mut out = Vec::new();
                loop {
                    t += exp.sample(rng.as_mut());
                    if t >= duration_s {
                        break;
                    }
                    let p = if rng.random::<bool>() { Polarity::Positive } else { Polarity::Negative };
                    out.push(Event { t: (t * 1e6).round() as u64, x: (idx % w) as u16, y: (idx / w) as u16, p });
                }
                out
            });
            for (st, extra) in self.pixels.iter_mut().zip(leaks) {
                st.events.extend(extra);
            }
        }
        let mut events: Vec<Event> = Vec::with_capacity(self.pixels.iter().map(|p| p.events.len()).sum());
        for st in &mut self.pixels {
            events.append(&mut st.events);
        }
        sort_events(&mut events, self.exec);
        EventStream { width: self.width, height: self.height, events }
    }
}

fn sort_events(events: &mut [Event], exec: Execution) {
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::slice::ParallelSliceMut;
        events.par_sort_unstable_by_key(Event::sort_key);
        return;
    }
    let _ = exec;
    events.sort_unstable_by_key(Event::sort_key);
}

pub fn frames_to_events(frames: &FrameSequence, threshold: f64, noise: NoiseConfig, rng_seed: u64) -> Result<EventStream> {
    frames_to_events_with(frames, threshold, noise, rng_seed, Execution::default())
}

pub fn frames_to_events_with(
    frames: &FrameSequence,
    threshold: f64,
    noise: NoiseConfig,
    rng_seed: u64,
    exec: Execution,
) -> Result<EventStream> {
    if frames.frames.len() < 2 {
        return Err(Error::arg("need at least two frames"));
    }
    let mut gen = EventGenerator::new(frames.width, frames.height, frames.frame_rate, threshold, noise, rng_seed)?
        .with_execution(exec);
    for f in &frames.frames {
        gen.push_frame(f)?;
    }
    Ok(gen.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(frames: Vec<Vec<f64>>) -> FrameSequence {
        FrameSequence { width: 2, height: 1, frame_rate: 1000.0, frames }
    }

    #[test]
    fn constant_frames_no_events() {
        let s = frames_to_events(&seq(vec![vec![0.3, 0.7]; 5]), 0.2, NoiseConfig::default(), 1).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn step_of_two_thresholds_gives_two_events() {
        let c: f64 = 0.2;
        let i0 = 0.1;
        let i1 = i0 * (2.0 * c).exp();
        let s = frames_to_events(&seq(vec![vec![i0, 0.5], vec![i1, 0.5]]), c, NoiseConfig::default(), 1).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.events.iter().all(|e| e.p == Polarity::Positive && e.x == 0));
        // crossings at 1/2 and 2/2 of the 1 ms interval
        assert_eq!(s.events[0].t, 500);
        assert_eq!(s.events[1].t, 1000);
    }

    #[test]
    fn sub_threshold_step_is_silent() {
        let c: f64 = 0.2;
        let i1 = 0.1 * (0.99 * c).exp();
        let s = frames_to_events(&seq(vec![vec![0.1, 0.5], vec![i1, 0.5]]), c, NoiseConfig::default(), 1).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn negative_step_and_reference_consistency() {
        let c = 0.15;
        let traj: Vec<f64> = (0..40).map(|k| 0.2 + 0.15 * (k as f64 * 0.7).sin() + 0.002 * k as f64).collect();
        let frames: Vec<Vec<f64>> = traj.iter().map(|&v| vec![v, 0.5]).collect();
        let s = frames_to_events(&seq(frames), c, NoiseConfig::default(), 3).unwrap();
        let net: i64 = s.events.iter().map(|e| e.p.sign() as i64).sum();
        let dlog = traj.last().unwrap().ln() - traj[0].ln();
        assert!((net as f64 * c - dlog).abs() <= c + 1e-9);
        assert!(s.events.iter().any(|e| e.p == Polarity::Negative));
        assert!(s.events.windows(2).all(|w| w[0].t <= w[1].t));
    }

    #[test]
    fn leak_and_jitter_are_seeded() {
        let noise = NoiseConfig { leak_event_rate: 200.0, threshold_jitter_sigma: 0.03 };
        let frames: Vec<Vec<f64>> = (0..200).map(|k| vec![0.3 + 0.2 * (k as f64 * 0.3).sin(), 0.5]).collect();
        let a = frames_to_events(&seq(frames.clone()), 0.1, noise, 9).unwrap();
        let b = frames_to_events_with(&seq(frames.clone()), 0.1, noise, 9, Execution::Sequential).unwrap();
        let c = frames_to_events(&seq(frames), 0.1, noise, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // the static pixel only produces leak events, ~200 Hz * 0.199 s
        let leaks = a.events.iter().filter(|e| e.x == 1).count();
        assert!((10..=90).contains(&leaks), "{leaks}");
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(frames_to_events(&seq(vec![vec![0.1, 0.1]]), 0.2, NoiseConfig::default(), 0).is_err());
        assert!(frames_to_events(&seq(vec![vec![0.1, 0.1]; 2]), 0.0, NoiseConfig::default(), 0).is_err());
    }
}
