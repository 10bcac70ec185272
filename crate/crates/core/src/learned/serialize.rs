use nalgebra::{DMatrix, DVector};

use super::attention::AttentionParams;
use super::model::ModelParams;
use super::ssm::SSMParams;
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"EVM1";
const FLAG_SAB: u32 = 1;
const FLAG_GATE: u32 = 2;

/// `EVM1`, `u32` C, S, H, flags, then every tensor as little-endian `f64`
/// in [`ModelParams::tensors`] order.
pub fn encode_model(p: &ModelParams) -> Vec<u8> {
    let cfg = p.config();
    let mut out = MODEL_MAGIC.to_vec();
    let flags = if cfg.use_sab { FLAG_SAB } else { 0 } | if cfg.gate { FLAG_GATE } else { 0 };
    for v in [cfg.channels as u32, cfg.state as u32, cfg.heads as u32, flags] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in p.to_vec() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Decode { location: format!("byte {offset}"), message: message.into() }
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < 20 || &bytes[..4] != MODEL_MAGIC {
        return Err(decode_error(0, "not an EVM1 model file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (c, s, h, flags) = (word(0), word(1), word(2), word(3) as u32);
    if c == 0 || s == 0 || h == 0 || c % h != 0 {
        return Err(decode_error(4, format!("invalid dimensions C={c} S={s} H={h}")));
    }
    if flags & !(FLAG_SAB | FLAG_GATE) != 0 {
        return Err(decode_error(16, format!("unknown flags {flags:#x}")));
    }
    let mut p = ModelParams {
        featurizer: DMatrix::zeros(c, 6),
        attention: AttentionParams {
            heads: h,
            wq: DMatrix::zeros(c, c),
            wk: DMatrix::zeros(c, c),
            wv: DMatrix::zeros(c, c),
            wo: DMatrix::zeros(c, c),
        },
        ssm: SSMParams {
            a: DMatrix::zeros(s, s),
            b: DMatrix::zeros(s, c),
            cout: DMatrix::zeros(1, s),
            delta: 0.0,
            gate: flags & FLAG_GATE != 0,
            gate_w: DVector::zeros(c),
            gate_b: 0.0,
        },
        use_sab: flags & FLAG_SAB != 0,
    };
    let count = p.to_vec().len();
    let body = &bytes[20..];
    if body.len() != 8 * count {
        return Err(decode_error(20, format!("expected {} tensor bytes, found {}", 8 * count, body.len())));
    }
    let values: Vec<f64> = body.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    p.set_from_slice(&values)?;
    p.validate().map_err(|e| decode_error(20, e.to_string()))?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learned::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_bitwise() {
        for (sab, gate) in [(false, false), (true, false), (true, true)] {
            let cfg = ModelConfig { channels: 6, state: 5, heads: 3, use_sab: sab, gate };
            let p = ModelParams::init(&cfg, 1e-3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let bytes = encode_model(&p);
            assert_eq!(&bytes[..4], b"EVM1");
            assert_eq!(decode_model(&bytes).unwrap(), p);
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let p = ModelParams::init(&ModelConfig::default(), 1e-3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let bytes = encode_model(&p);
        assert!(decode_model(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_model(b"EVM2").is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_model(&bad).is_err());
        let mut bad = bytes;
        bad[16] = 0xff;
        assert!(decode_model(&bad).is_err());
    }
}
