//! Binary logit cache.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset 0   magic   b"NKDL"
//! offset 4   version u32 = 1
//! offset 8   N       u32
//! offset 12  C       u32
//! offset 16  N records of { sample_id u32, label u32, C × f32 logits }
//! ```
//!
//! File length is exactly `16 + N·(8 + 4·C)`. Logits are stored as `f32`;
//! widening back to `f64` on read is exact.

use std::path::Path;

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::logitstats::LogitRecord;

pub const MAGIC: &[u8; 4] = b"NKDL";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Exact file length for `n` records of `c` classes.
pub fn expected_len(n: usize, c: usize) -> u128 {
    HEADER_LEN as u128 + n as u128 * (8 + 4 * c as u128)
}

/// Serializes records sharing one class count.
pub fn encode(records: &[LogitRecord]) -> Result<Vec<u8>> {
    let c = records.first().map_or(0, |r| r.logits.len());
    let n = u32::try_from(records.len()).map_err(|_| Error::contract("too many records for a cache"))?;
    let c32 = u32::try_from(c).map_err(|_| Error::contract("too many classes for a cache"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + records.len() * (8 + 4 * c));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&c32.to_le_bytes());
    for r in records {
        if r.logits.len() != c {
            return Err(Error::Dimension {
                op: "logit cache",
                left: (r.sample_id as usize, r.logits.len()),
                right: (0, c),
            });
        }
        let label = u32::try_from(r.label).map_err(|_| Error::contract("label exceeds u32"))?;
        out.extend_from_slice(&r.sample_id.to_le_bytes());
        out.extend_from_slice(&label.to_le_bytes());
        for &v in &r.logits {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::numeric(format!(
                    "sample {}: logit {v} does not fit in f32",
                    r.sample_id
                )));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"))
}

/// Parses a cache image; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<LogitRecord>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!(
                "truncated header: expected at least {HEADER_LEN} bytes, found {}",
                bytes.len()
            ),
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(
            path,
            0,
            format!("bad magic {:?}, expected \"NKDL\"", &bytes[..4]),
        ));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::format(
            path,
            4,
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let n = u32_at(bytes, 8) as usize;
    let c = u32_at(bytes, 12) as usize;
    let want = expected_len(n, c);
    if bytes.len() as u128 != want {
        let off = (bytes.len() as u128).min(want) as u64;
        return Err(Error::format(
            path,
            off,
            format!(
                "length mismatch: expected {want} bytes for N={n} C={c}, found {}",
                bytes.len()
            ),
        ));
    }
    let mut records = Vec::with_capacity(n);
    let mut off = HEADER_LEN;
    for _ in 0..n {
        let sample_id = u32_at(bytes, off);
        let label = u32_at(bytes, off + 4) as usize;
        let rec_off = off;
        off += 8;
        let mut logits = Vec::with_capacity(c);
        for _ in 0..c {
            let f = f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
            if !f.is_finite() {
                return Err(Error::format(path, off as u64, "non-finite logit"));
            }
            logits.push(f as f64);
            off += 4;
        }
        if label >= c {
            return Err(Error::format(
                path,
                rec_off as u64 + 4,
                format!("label {label} outside [0, {c})"),
            ));
        }
        records.push(LogitRecord {
            sample_id,
            label,
            logits,
        });
    }
    Ok(records)
}

pub fn write(path: &Path, records: &[LogitRecord]) -> Result<()> {
    write_atomic(path, &encode(records)?)
}

pub fn read(path: &Path) -> Result<Vec<LogitRecord>> {
    decode(&read_bytes(path)?, path)
}

/// Rounds logits to `f32` precision, matching what a write/read round trip yields.
pub fn quantize(records: &[LogitRecord]) -> Vec<LogitRecord> {
    records
        .iter()
        .map(|r| LogitRecord {
            logits: r.logits.iter().map(|&v| v as f32 as f64).collect(),
            ..r.clone()
        })
        .collect()
}
