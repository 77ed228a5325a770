//! Binary MLP parameter file.
//!
//! Little-endian: magic `b"NKDM"`, version `u32 = 1`, widths count `u32`,
//! the widths as `u32`, then each layer's weight (row-major) and bias as
//! `f64`.

use std::path::Path;

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::numcore::Matrix;
use crate::trainer::{Layer, Mlp};

pub const MAGIC: &[u8; 4] = b"NKDM";
pub const VERSION: u32 = 1;

pub fn encode(model: &Mlp) -> Vec<u8> {
    let widths = model.widths();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(widths.len() as u32).to_le_bytes());
    for w in &widths {
        out.extend_from_slice(&(*w as u32).to_le_bytes());
    }
    for v in model.params().flat_map(|m| m.as_slice()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Mlp> {
    let u32_at = |off: usize| -> Result<u32> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| Error::format(path, bytes.len() as u64, format!("truncated: need {} bytes", off + 4)))
    };
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(Error::format(path, 0, "bad magic, expected \"NKDM\""));
    }
    let version = u32_at(4)?;
    if version != VERSION {
        return Err(Error::format(path, 4, format!("unsupported version {version}")));
    }
    let count = u32_at(8)? as usize;
    if !(2..=1024).contains(&count) {
        return Err(Error::format(path, 8, format!("implausible layer count {count}")));
    }
    let widths: Vec<usize> = (0..count)
        .map(|i| u32_at(12 + 4 * i).map(|w| w as usize))
        .collect::<Result<_>>()?;
    let params: u128 = widths
        .windows(2)
        .map(|w| w[0] as u128 * w[1] as u128 + w[1] as u128)
        .sum();
    let data_off = 12 + 4 * count;
    let want = data_off as u128 + 8 * params;
    if bytes.len() as u128 != want {
        return Err(Error::format(
            path,
            (bytes.len() as u128).min(want) as u64,
            format!("length mismatch: expected {want} bytes, found {}", bytes.len()),
        ));
    }
    let mut values = bytes[data_off..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |rows: usize, cols: usize| {
        Matrix::from_vec(rows, cols, values.by_ref().take(rows * cols).collect()).expect("length checked")
    };
    let layers = widths
        .windows(2)
        .map(|w| Layer {
            weight: take(w[0], w[1]),
            bias: take(1, w[1]),
        })
        .collect();
    Ok(Mlp { layers })
}

pub fn write(path: &Path, model: &Mlp) -> Result<()> {
    write_atomic(path, &encode(model))
}

pub fn read(path: &Path) -> Result<Mlp> {
    decode(&read_bytes(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{init_mlp, MlpSpec};

    #[test]
    fn round_trip_and_corruption() {
        let m = init_mlp(&MlpSpec::new(vec![3, 5, 2], 4).unwrap()).unwrap();
        let bytes = encode(&m);
        assert_eq!(decode(&bytes, Path::new("m")).unwrap(), m);
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
        let mut bad = bytes.clone();
        bad[0] = 0;
        assert!(decode(&bad, Path::new("m")).is_err());
        assert!(decode(&[], Path::new("m")).is_err());
    }
}
