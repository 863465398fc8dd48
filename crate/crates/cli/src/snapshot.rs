//! Append-only binary snapshot records, little-endian:
//!
//! ```text
//! "CFLW" | version u32 | n u32 | t f64 | values f64×n | theta f64×k | crc32 u32
//! ```
//!
//! `k` is the torus dimension of the run's forcing (known from the config), and
//! the checksum covers every preceding byte of the record.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"CFLW";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot io: {0}")]
    Io(#[from] std::io::Error),
    #[error("record {index}: bad magic")]
    Magic { index: usize },
    #[error("record {index}: version {found} is not supported (expected {VERSION})")]
    Version { index: usize, found: u32 },
    #[error("record {index}: checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { index: usize, stored: u32, computed: u32 },
    #[error("record {index}: truncated")]
    Truncated { index: usize },
    #[error("record {index}: grid n = {found}, expected {expected}")]
    GridSize { index: usize, found: usize, expected: usize },
    #[error("snapshot file has no records")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRecord {
    pub t: f64,
    pub values: Vec<f64>,
    pub theta: Vec<f64>,
}

impl SnapshotRecord {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(24 + 8 * (self.values.len() + self.theta.len()));
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        buf.extend_from_slice(&self.t.to_le_bytes());
        for v in self.values.iter().chain(&self.theta) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }
}

/// Append records to `path`, creating it if needed.
pub fn append(path: &Path, records: &[SnapshotRecord]) -> Result<(), SnapshotError> {
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = BufWriter::new(file);
    for r in records {
        w.write_all(&r.encode())?;
    }
    w.flush()?;
    Ok(())
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, len: usize, index: usize) -> Result<&'a [u8], SnapshotError> {
    let end = pos.checked_add(len).filter(|&e| e <= bytes.len()).ok_or(SnapshotError::Truncated { index })?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn f64_at(b: &[u8]) -> f64 {
    f64::from_le_bytes(b.try_into().expect("8 bytes"))
}

fn u32_at(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().expect("4 bytes"))
}

/// Decode every record. `n` and `k` are taken from the run config; a record
/// whose stored `n` disagrees is rejected.
pub fn decode(bytes: &[u8], n: usize, k: usize) -> Result<Vec<SnapshotRecord>, SnapshotError> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let index = out.len();
        let start = pos;
        if take(bytes, &mut pos, 4, index)? != MAGIC {
            return Err(SnapshotError::Magic { index });
        }
        let version = u32_at(take(bytes, &mut pos, 4, index)?);
        if version != VERSION {
            return Err(SnapshotError::Version { index, found: version });
        }
        let found = u32_at(take(bytes, &mut pos, 4, index)?) as usize;
        if found != n {
            return Err(SnapshotError::GridSize { index, found, expected: n });
        }
        let body = take(bytes, &mut pos, 8 * (1 + n + k), index)?;
        let computed = crc32fast::hash(&bytes[start..pos]);
        let stored = u32_at(take(bytes, &mut pos, 4, index)?);
        if stored != computed {
            return Err(SnapshotError::Checksum { index, stored, computed });
        }
        let mut words = body.chunks_exact(8).map(f64_at);
        let t = words.next().expect("time word");
        let values: Vec<f64> = words.by_ref().take(n).collect();
        let theta: Vec<f64> = words.collect();
        out.push(SnapshotRecord { t, values, theta });
    }
    Ok(out)
}

pub fn read_all(path: &Path, n: usize, k: usize) -> Result<Vec<SnapshotRecord>, SnapshotError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let records = decode(&bytes, n, k)?;
    if records.is_empty() {
        return Err(SnapshotError::Empty);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: f64) -> SnapshotRecord {
        SnapshotRecord { t, values: vec![1.0, -2.5, t, 0.0], theta: vec![0.25, 3.0] }
    }

    #[test]
    fn roundtrip_several_records() {
        let mut bytes = rec(0.0).encode();
        bytes.extend(rec(0.5).encode());
        assert_eq!(bytes.len(), 2 * (4 + 4 + 4 + 8 * 7 + 4));
        let back = decode(&bytes, 4, 2).unwrap();
        assert_eq!(back, vec![rec(0.0), rec(0.5)]);
    }

    #[test]
    fn corruption_and_version_are_rejected() {
        let mut bytes = rec(1.0).encode();
        bytes[20] ^= 0x40;
        assert!(matches!(decode(&bytes, 4, 2), Err(SnapshotError::Checksum { index: 0, .. })));

        let mut bytes = rec(1.0).encode();
        bytes[4] = 7;
        assert!(matches!(decode(&bytes, 4, 2), Err(SnapshotError::Version { found: 7, .. })));

        let bytes = rec(1.0).encode();
        assert!(matches!(decode(&bytes[..bytes.len() - 1], 4, 2), Err(SnapshotError::Truncated { .. })));
        assert!(matches!(decode(&bytes, 8, 2), Err(SnapshotError::GridSize { .. })));
    }
}
