//! Raw binary format for AMF response fields.
//!
//! Little-endian layout:
//!
//! | field        | type                 |
//! |--------------|----------------------|
//! | magic        | `b"AMFRESP1"`        |
//! | nx, ny, nz   | 3 × u32              |
//! | directions   | u32 (13)             |
//! | functionals  | u32 (4)              |
//! | spacing      | 3 × f64              |
//! | hash length  | u32, then UTF-8 hash |
//! | white mask   | nx·ny·nz bytes, 0/1  |
//! | payload      | f64, voxel-major, then direction, then functional |

use std::fs;
use std::path::Path;

use super::{AMFResponses, FUNCTIONAL_COUNT, ROW_LEN};
use crate::error::{Error, Result};
use crate::kernelgen::DIRECTION_COUNT;
use crate::scalar::Real;
use crate::volume_io::{voxel_count, write_file};

pub const RESPONSES_MAGIC: &[u8; 8] = b"AMFRESP1";

pub fn encode_responses<T: Real>(field: &AMFResponses<T>, config_hash: Option<&str>) -> Vec<u8> {
    let hash = config_hash.unwrap_or("").as_bytes();
    let n = field.voxel_count();
    let mut out = Vec::with_capacity(64 + hash.len() + n + field.data.len() * 8);
    out.extend_from_slice(RESPONSES_MAGIC);
    for v in field
        .dims
        .iter()
        .copied()
        .chain([DIRECTION_COUNT, FUNCTIONAL_COUNT])
    {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for s in field.spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(&(hash.len() as u32).to_le_bytes());
    out.extend_from_slice(hash);
    out.extend(field.white.iter().map(|&w| w as u8));
    for v in &field.data {
        out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("responses", "file is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a response file, returning the field and its config hash.
pub fn decode_responses(bytes: &[u8]) -> Result<(AMFResponses<f64>, Option<String>)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != RESPONSES_MAGIC {
        return Err(Error::format("responses", "bad magic"));
    }
    let dims = [c.u32()?, c.u32()?, c.u32()?];
    let (nd, nf) = (c.u32()?, c.u32()?);
    if nd != DIRECTION_COUNT || nf != FUNCTIONAL_COUNT {
        return Err(Error::format(
            "responses",
            format!(
                "expected {DIRECTION_COUNT}×{FUNCTIONAL_COUNT} responses, header says {nd}×{nf}"
            ),
        ));
    }
    let spacing = [c.f64()?, c.f64()?, c.f64()?];
    let hash_len = c.u32()?;
    let hash = std::str::from_utf8(c.take(hash_len)?)
        .map_err(|_| Error::format("responses", "hash is not UTF-8"))?;
    let hash = (!hash.is_empty()).then(|| hash.to_string());
    let n = voxel_count(dims);
    let white = c
        .take(n)?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::format("responses", format!("mask byte {b}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let expected = n * ROW_LEN * 8;
    let payload = &bytes[c.pos..];
    if payload.len() != expected {
        return Err(Error::LengthMismatch {
            dims,
            expected: n * ROW_LEN,
            actual: payload.len() / 8,
        });
    }
    let data = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((
        AMFResponses {
            dims,
            spacing,
            white,
            data,
        },
        hash,
    ))
}

pub fn write_responses<T: Real>(
    field: &AMFResponses<T>,
    path: impl AsRef<Path>,
    config_hash: Option<&str>,
) -> Result<()> {
    write_file(path.as_ref(), &encode_responses(field, config_hash))
}

pub fn read_responses(path: impl AsRef<Path>) -> Result<(AMFResponses<f64>, Option<String>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_responses(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> AMFResponses<f64> {
        let dims = [2, 1, 3];
        let n = 6;
        AMFResponses {
            dims,
            spacing: [0.5, 1.0, 2.0],
            white: (0..n).map(|i| i % 2 == 0).collect(),
            data: (0..n * ROW_LEN).map(|i| i as f64 * 0.1 - 3.0).collect(),
        }
    }

    #[test]
    fn round_trip() {
        let f = sample();
        let bytes = encode_responses(&f, Some("deadbeef"));
        let (back, hash) = decode_responses(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(hash.as_deref(), Some("deadbeef"));
        let (_, none) = decode_responses(&encode_responses(&f, None)).unwrap();
        assert_eq!(none, None);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_responses(&sample(), None);
        assert_eq!(&bytes[..8], RESPONSES_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 13);
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 4);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode_responses(&sample(), None);
        assert!(decode_responses(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_responses(&bytes[..20]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_responses(&bad).is_err());
        let mut bad = bytes;
        bad[20] = 12;
        assert!(decode_responses(&bad).is_err());
    }
}
