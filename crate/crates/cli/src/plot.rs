use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

/// Binary 8-bit PGM; `pixels` row-major, top row first.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(pixels)?;
    f.flush()?;
    Ok(())
}

/// Maps `values` linearly from `[lo, hi]` onto `0..=255`.
pub fn to_gray(values: &[f64], lo: f64, hi: f64) -> Vec<u8> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    values.iter().map(|v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

/// Log-magnitude image, low frequencies at the bottom, 60 dB of range.
pub fn spectrogram_image(magnitudes: &[Vec<f64>]) -> (usize, usize, Vec<u8>) {
    let (frames, bins) = (magnitudes.len(), magnitudes[0].len());
    let db: Vec<Vec<f64>> = magnitudes.iter().map(|f| f.iter().map(|m| 20.0 * (m + 1e-12).log10()).collect()).collect();
    let top = db.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut flat = Vec::with_capacity(frames * bins);
    for k in (0..bins).rev() {
        flat.extend(db.iter().map(|f| f[k]));
    }
    (frames, bins, to_gray(&flat, top - 60.0, top))
}

/// Polyline of the waveform on a dark background, one column per pixel.
pub fn waveform_image(samples: &[f64], width: usize, height: usize) -> Vec<u8> {
    let mut img = vec![0u8; width * height];
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let row = |v: f64| (((1.0 - v / peak) * 0.5 * (height - 1) as f64).round() as usize).min(height - 1);
    for x in 0..width {
        let a = x * samples.len() / width;
        let b = ((x + 1) * samples.len() / width).max(a + 1).min(samples.len());
        let (lo, hi) = samples[a..b].iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        for y in row(hi)..=row(lo) {
            img[y * width + x] = 255;
        }
    }
    img
}
