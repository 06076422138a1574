//! Parameter checkpoint file.
//!
//! Layout (all integers little-endian `u32`):
//! `RCKP1\0\0\0`, header length, UTF-8 JSON header, record count, then per
//! record: name length, name, rank, dims, and the `f32` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::Array;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"RCKP1\0\0\0";

pub fn encode_checkpoint(header: &serde_json::Value, records: &[(String, &Array<f32>)]) -> Result<Vec<u8>> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    let header = serde_json::to_vec(header)?;
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, arr) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(arr.shape().len() as u32).to_le_bytes());
        for &d in arr.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in arr.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("checkpoint truncated, wanted {n} more bytes"),
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub type CheckpointRecords = Vec<(String, Array<f32>)>;

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(serde_json::Value, CheckpointRecords)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad checkpoint magic".into(),
        });
    }
    let hlen = r.u32()?;
    let header = serde_json::from_slice(r.take(hlen)?)?;
    let count = r.u32()?;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = r.u32()?;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| Error::Format {
                offset: at,
                message: "parameter name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push((name, Array::from_vec(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos,
            message: "trailing bytes after last record".into(),
        });
    }
    Ok((header, records))
}

pub fn write_checkpoint(
    path: impl AsRef<Path>,
    header: &serde_json::Value,
    records: &[(String, &Array<f32>)],
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(header, records)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(serde_json::Value, CheckpointRecords)> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let a = Array::<f32>::from_vec(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-3, 7.0]).unwrap();
        let b = Array::<f32>::scalar(4.0);
        let header = serde_json::json!({"seed": 7});
        let bytes = encode_checkpoint(&header, &[("gen.a".into(), &a), ("disc.b".into(), &b)]).unwrap();
        let (h, recs) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(h, header);
        assert_eq!(recs, vec![("gen.a".to_string(), a), ("disc.b".to_string(), b)]);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }
}
