use std::fmt::Write as _;
use std::path::Path;

use super::{Event, EventStream, Polarity};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"EVS1";
const HEADER_LEN: usize = 4 + 2 + 2 + 8;
const RECORD_LEN: usize = 8 + 2 + 2 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    /// `t_us x y p` lines, `#` comments.
    Text,
    /// Little-endian `EVS1` container.
    Binary,
}

impl std::str::FromStr for EventFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "txt" => Ok(EventFormat::Text),
            "binary" | "bin" => Ok(EventFormat::Binary),
            other => Err(Error::arg(format!("unknown event format `{other}`"))),
        }
    }
}

impl EventFormat {
    /// `.evs`/`.bin` are binary, everything else text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("evs") | Some("bin") => EventFormat::Binary,
            _ => EventFormat::Text,
        }
    }
}

/// Reads either format, sniffing the `EVS1` magic.
pub fn read_events(path: impl AsRef<Path>) -> Result<EventStream> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        decode_binary(&bytes)
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Decode {
            location: format!("byte {}", e.valid_up_to()),
            message: "text event file is not valid UTF-8".into(),
        })?;
        decode_text(text)
    }
}

pub fn write_events(stream: &EventStream, path: impl AsRef<Path>, format: EventFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        EventFormat::Text => encode_text(stream).into_bytes(),
        EventFormat::Binary => encode_binary(stream),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_binary(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.events.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&stream.width.to_le_bytes());
    out.extend_from_slice(&stream.height.to_le_bytes());
    out.extend_from_slice(&(stream.events.len() as u64).to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p.sign() as u8);
    }
    out
}

fn decode_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Decode { location: format!("byte {offset}"), message: message.into() }
}

pub fn decode_binary(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < HEADER_LEN {
        return Err(decode_err(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(decode_err(0, "bad magic, expected EVS1"));
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]);
    let height = u16::from_le_bytes([bytes[6], bytes[7]]);
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    let expected = count
        .checked_mul(RECORD_LEN as u64)
        .ok_or_else(|| decode_err(8, "record count overflows"))?;
    if body.len() as u64 != expected {
        return Err(decode_err(
            HEADER_LEN,
            format!("header declares {count} records but body holds {} bytes", body.len()),
        ));
    }
    if width == 0 || height == 0 {
        return Err(decode_err(4, "zero sensor dimension"));
    }
    let mut events = Vec::with_capacity(count as usize);
    for (i, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let offset = HEADER_LEN + i * RECORD_LEN;
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        let p = Polarity::try_from(rec[12] as i8 as i64).map_err(|m| decode_err(offset + 12, m))?;
        if x >= width || y >= height {
            return Err(decode_err(offset + 8, format!("event ({x}, {y}) outside {width}x{height}")));
        }
        events.push(Event { t, x, y, p });
    }
    EventStream::new(width, height, events)
}

pub fn encode_text(stream: &EventStream) -> String {
    let mut out = String::with_capacity(24 * stream.events.len() + 32);
    let _ = writeln!(out, "# evs width={} height={}", stream.width, stream.height);
    for e in &stream.events {
        let _ = writeln!(out, "{} {} {} {}", e.t, e.x, e.y, e.p.sign());
    }
    out
}

fn dims_from_comment(line: &str) -> Option<(u16, u16)> {
    let mut w = None;
    let mut h = None;
    for tok in line.trim_start_matches('#').split_whitespace() {
        if let Some(v) = tok.strip_prefix("width=") {
            w = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("height=") {
            h = v.parse().ok();
        }
    }
    Some((w?, h?))
}

/// Parses the text format. Sensor size comes from a `# ... width=W height=H`
/// comment when present, otherwise from the largest coordinates seen.
pub fn decode_text(text: &str) -> Result<EventStream> {
    let mut dims = None;
    let mut events = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if dims.is_none() {
                dims = dims_from_comment(line);
            }
            continue;
        }
        let err = |m: &str| Error::Decode { location: format!("line {line_no}"), message: m.to_string() };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(err("expected 4 fields `t_us x y p`"));
        }
        let t: u64 = fields[0].parse().map_err(|_| err("invalid timestamp"))?;
        let x: u16 = fields[1].parse().map_err(|_| err("invalid x"))?;
        let y: u16 = fields[2].parse().map_err(|_| err("invalid y"))?;
        let p: i64 = fields[3].parse().map_err(|_| err("invalid polarity"))?;
        let p = Polarity::try_from(p).map_err(err)?;
        if let Some((w, h)) = dims {
            if x >= w || y >= h {
                return Err(err("event outside sensor bounds"));
            }
        }
        events.push(Event { t, x, y, p });
    }
    let (w, h) = match dims {
        Some(d) => d,
        None => {
            let w = events.iter().map(|e| e.x).max().map_or(1, |m| m + 1);
            let h = events.iter().map(|e| e.y).max().map_or(1, |m| m + 1);
            (w, h)
        }
    };
    EventStream::new(w, h, events)
}
