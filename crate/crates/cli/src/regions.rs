use anyhow::Result;
use evmic_core::events::RegionSpec;
use evmic_core::AudioSignal;

use crate::UsageError;

fn usage(msg: String) -> anyhow::Error {
    UsageError(msg).into()
}

/// `WxH`, both positive.
pub fn parse_extent(text: &str) -> Result<(usize, usize)> {
    let bad = || usage(format!("patch size `{text}` is not of the form WxH"));
    let (w, h) = text.split_once(['x', 'X']).ok_or_else(bad)?;
    let (w, h): (usize, usize) = (w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?);
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

/// `cx,cy,w,h;cx,cy,w,h;...`, ids in order of appearance.
pub fn parse_region_list(text: &str) -> Result<Vec<RegionSpec>> {
    let mut out = Vec::new();
    for (id, item) in text.split(';').map(str::trim).filter(|s| !s.is_empty()).enumerate() {
        let bad = || usage(format!("region `{item}` is not of the form cx,cy,w,h"));
        let f: Vec<&str> = item.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let cx: i64 = f[0].parse().map_err(|_| bad())?;
        let cy: i64 = f[1].parse().map_err(|_| bad())?;
        let w: usize = f[2].parse().map_err(|_| bad())?;
        let h: usize = f[3].parse().map_err(|_| bad())?;
        if w == 0 || h == 0 {
            return Err(bad());
        }
        out.push(RegionSpec::new((cx, cy), (w, h), id));
    }
    if out.is_empty() {
        return Err(usage("no regions given".into()));
    }
    Ok(out)
}

/// Average of the per-region signals after scaling each to unit RMS and
/// flipping its sign to agree with the first one.
pub fn pool(signals: &[AudioSignal]) -> AudioSignal {
    let first = &signals[0];
    let mut acc = vec![0.0; first.len()];
    for s in signals {
        let rms = s.rms();
        if rms == 0.0 {
            continue;
        }
        let dot: f64 = s.samples.iter().zip(&first.samples).map(|(a, b)| a * b).sum();
        let k = if dot < 0.0 { -1.0 / rms } else { 1.0 / rms };
        acc.iter_mut().zip(&s.samples).for_each(|(a, v)| *a += k * v);
    }
    let n = signals.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    AudioSignal { sample_rate: first.sample_rate, samples: acc }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lists_and_extents() {
        let r = parse_region_list("16,16,32,32; 40,8,8,4").unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!((r[1].center, r[1].extent, r[1].id), ((40, 8), (8, 4), 1));
        assert!(parse_region_list("1,2,3").is_err());
        assert!(parse_region_list("1,2,0,3").is_err());
        assert!(parse_region_list(" ; ").is_err());
        assert_eq!(parse_extent("24x16").unwrap(), (24, 16));
        assert!(parse_extent("24").is_err());
    }

    #[test]
    fn pooling_aligns_signs() {
        let a = AudioSignal::new(100, vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let b = AudioSignal::new(100, vec![-2.0, 2.0, -2.0, 2.0]).unwrap();
        assert_eq!(pool(&[a.clone(), b]).samples, a.samples);
    }
}
