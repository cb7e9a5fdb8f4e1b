//! `HNFV` feature files and the CSV ingester.
//!
//! `HNFV` layout (little-endian): magic `HNFV`, version u32 = 1, N u64, D u32,
//! L u32 (label vocabulary size), then N records of D f32 features followed by
//! a `ceil(L/8)`-byte label bitset where label `l` is bit `l % 8` of byte
//! `l / 8`. Point ids are record positions.

use std::io::{BufRead, Read, Write};

use super::{Dataset, LabeledPoint};
use crate::codes::{read_u32, read_u64};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HNFV";
const VERSION: u32 = 1;

pub fn write_features<W: Write>(mut out: W, data: &Dataset) -> Result<()> {
    let dim = u32::try_from(data.dim()).map_err(|_| Error::invalid("dimension too large"))?;
    let vocab = data.label_vocab();
    let label_bytes = (vocab as usize).div_ceil(8);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(data.len() as u64).to_le_bytes())?;
    out.write_all(&dim.to_le_bytes())?;
    out.write_all(&vocab.to_le_bytes())?;
    let mut bitset = vec![0u8; label_bytes];
    for p in data.points() {
        for v in &p.features {
            out.write_all(&v.to_le_bytes())?;
        }
        bitset.fill(0);
        for &l in p.labels() {
            bitset[l as usize / 8] |= 1 << (l % 8);
        }
        out.write_all(&bitset)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_features<R: Read>(mut input: R) -> Result<Dataset> {
    let bad = |reason: String| Error::format("HNFV", reason);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = read_u64(&mut input)?;
    let dim = read_u32(&mut input)? as usize;
    let vocab = read_u32(&mut input)?;
    if dim == 0 {
        return Err(bad("zero dimension".into()));
    }
    let label_bytes = (vocab as usize).div_ceil(8);
    let mut feat_buf = vec![0u8; dim * 4];
    let mut label_buf = vec![0u8; label_bytes];
    let mut points = Vec::with_capacity(n.min(1 << 20) as usize);
    for id in 0..n {
        input.read_exact(&mut feat_buf)?;
        input.read_exact(&mut label_buf)?;
        let features = feat_buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let labels = (0..vocab).filter(|&l| label_buf[l as usize / 8] >> (l % 8) & 1 == 1);
        points.push(LabeledPoint::new(id, features, labels).map_err(|e| bad(e.to_string()))?);
    }
    Dataset::new(dim, vocab, points).map_err(|e| bad(e.to_string()))
}

/// Reads rows of `label1|label2,f_1,...,f_D`. Labels are non-negative integer
/// ids; the vocabulary is one past the largest id seen.
pub fn read_csv<R: BufRead>(input: R) -> Result<Dataset> {
    let mut points = Vec::new();
    let mut dim = None;
    let mut vocab = 0u32;
    for (line_no, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |reason: &str| Error::format("CSV", format!("line {}: {reason}", line_no + 1));
        let mut fields = line.split(',');
        let labels = fields
            .next()
            .unwrap_or_default()
            .split('|')
            .map(|l| l.trim().parse::<u32>().map_err(|_| bad("label is not an integer id")))
            .collect::<Result<Vec<_>>>()?;
        let features = fields
            .map(|f| f.trim().parse::<f32>().map_err(|_| bad("feature is not a number")))
            .collect::<Result<Vec<_>>>()?;
        match dim {
            None => dim = Some(features.len()),
            Some(d) if d != features.len() => return Err(bad("inconsistent feature count")),
            _ => {}
        }
        vocab = vocab.max(labels.iter().max().map_or(0, |&l| l + 1));
        let id = points.len() as u64;
        points.push(LabeledPoint::new(id, features, labels).map_err(|e| bad(&e.to_string()))?);
    }
    let dim = dim.ok_or_else(|| Error::format("CSV", "no rows"))?;
    Dataset::new(dim, vocab, points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairdata::{generate_synthetic, SyntheticSpec};

    #[test]
    fn header_layout() {
        let p = LabeledPoint::new(0, vec![1.0, -2.0], [0, 9]).unwrap();
        let d = Dataset::new(2, 10, vec![p]).unwrap();
        let mut buf = Vec::new();
        write_features(&mut buf, &d).unwrap();
        let mut expected = b"HNFV".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u64.to_le_bytes());
        expected.extend(2u32.to_le_bytes());
        expected.extend(10u32.to_le_bytes());
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.0f32).to_le_bytes());
        expected.extend([0b0000_0001, 0b0000_0010]);
        assert_eq!(buf, expected);
        assert_eq!(read_features(&buf[..]).unwrap(), d);
    }

    #[test]
    fn round_trip_multilabel() {
        let d = generate_synthetic(&SyntheticSpec {
            classes: 11,
            per_class: 7,
            dim: 5,
            spread: 0.5,
            multilabel: true,
            seed: 4,
        })
        .unwrap();
        let mut buf = Vec::new();
        write_features(&mut buf, &d).unwrap();
        assert_eq!(read_features(&buf[..]).unwrap(), d);
    }

    #[test]
    fn rejects_truncated_and_unlabeled() {
        let p = LabeledPoint::new(0, vec![1.0], [2]).unwrap();
        let d = Dataset::new(1, 3, vec![p]).unwrap();
        let mut buf = Vec::new();
        write_features(&mut buf, &d).unwrap();
        assert!(read_features(&buf[..buf.len() - 1]).is_err());
        let last = buf.len() - 1;
        buf[last] = 0;
        assert!(read_features(&buf[..]).is_err());
    }

    #[test]
    fn csv_ingest() {
        let text = "2|5,0.5,1.0\n9,1.5,-2\n\n";
        let d = read_csv(text.as_bytes()).unwrap();
        assert_eq!((d.len(), d.dim(), d.label_vocab()), (2, 2, 10));
        assert_eq!(d.point(0).labels(), &[2, 5]);
        assert_eq!(d.point(1).features, vec![1.5, -2.0]);
        assert!(read_csv("1,0.5\n2,0.5,0.1\n".as_bytes()).is_err());
        assert!(read_csv("x,0.5\n".as_bytes()).is_err());
        assert!(read_csv("".as_bytes()).is_err());
    }
}
