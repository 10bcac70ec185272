use std::path::Path;

use crate::{AudioSignal, Error, Result};

fn spec(channels: u16, sample_rate: u32) -> hound::WavSpec {
    hound::WavSpec { channels, sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int }
}

fn to_i16(v: f64) -> i16 {
    (v.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

/// Reads a mono 16-bit PCM WAV into `[-1, 1)` samples.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioSignal> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = hound::WavReader::new(std::io::BufReader::new(file))?;
    let s = reader.spec();
    if s.channels != 1 {
        return Err(Error::arg(format!("{}: expected mono audio, found {} channels", path.display(), s.channels)));
    }
    if s.sample_format != hound::SampleFormat::Int || s.bits_per_sample != 16 {
        return Err(Error::arg(format!("{}: expected 16-bit PCM", path.display())));
    }
    let samples = reader
        .samples::<i16>()
        .map(|v| v.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    AudioSignal::new(s.sample_rate, samples)
}

/// Writes samples clamped to `[-1, 1]` as 16-bit PCM.
pub fn write_wav(path: impl AsRef<Path>, audio: &AudioSignal) -> Result<()> {
    let path = path.as_ref();
    let mut w = hound::WavWriter::create(path, spec(1, audio.sample_rate))?;
    for &v in &audio.samples {
        w.write_sample(to_i16(v))?;
    }
    w.finalize()?;
    Ok(())
}

/// Peak-normalises to 0.99 first; recovered signals carry arbitrary scale.
pub fn write_wav_normalized(path: impl AsRef<Path>, audio: &AudioSignal) -> Result<()> {
    let peak = audio.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = audio.clone();
    if peak > 0.0 {
        out.samples.iter_mut().for_each(|v| *v *= 0.99 / peak);
    }
    write_wav(path, &out)
}

/// Two-channel PCM-16, each channel peak-normalised independently.
pub fn write_wav_stereo(path: impl AsRef<Path>, left: &AudioSignal, right: &AudioSignal) -> Result<()> {
    if left.sample_rate != right.sample_rate || left.len() != right.len() {
        return Err(Error::arg("stereo channels must share rate and length"));
    }
    let norm = |a: &AudioSignal| {
        let peak = a.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 { 0.99 / peak } else { 1.0 }
    };
    let (kl, kr) = (norm(left), norm(right));
    let path = path.as_ref();
    let mut w = hound::WavWriter::create(path, spec(2, left.sample_rate))?;
    for (l, r) in left.samples.iter().zip(&right.samples) {
        w.write_sample(to_i16(l * kl))?;
        w.write_sample(to_i16(r * kr))?;
    }
    w.finalize()?;
    Ok(())
}
