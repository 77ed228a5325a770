//! Text dataset files: a `C D N` header line, then `N` lines of
//! `label,f1,...,fD`. Features are written in shortest round-trip decimal.

use std::fmt::Write as _;
use std::path::Path;

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::numcore::Matrix;
use crate::trainer::Dataset;

pub fn encode(data: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {}", data.classes, data.dim(), data.len());
    for (row, label) in data.features.row_iter().zip(&data.labels) {
        let _ = write!(out, "{label}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn decode(text: &str, path: &Path) -> Result<Dataset> {
    let mut offset = 0u64;
    let mut lines = text.split_inclusive('\n').map(|l| {
        let start = offset;
        offset += l.len() as u64;
        (start, l.trim_end_matches(['\n', '\r']))
    });
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(path, 0, "empty dataset file"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(path, 0, format!("header `{header}` is not `C D N`")))?;
    let &[classes, dim, n] = dims.as_slice() else {
        return Err(Error::format(path, 0, format!("header `{header}` is not `C D N`")));
    };
    if classes == 0 {
        return Err(Error::format(path, 0, "class count must be positive"));
    }

    let mut features = Vec::with_capacity(n.saturating_mul(dim).min(1 << 24));
    let mut labels = Vec::with_capacity(n.min(1 << 20));
    for (start, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if labels.len() == n {
            return Err(Error::format(path, start, format!("more than the {n} rows declared")));
        }
        let mut fields = line.split(',');
        let label: usize = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| Error::format(path, start, "row does not start with a label"))?;
        if label >= classes {
            return Err(Error::format(
                path,
                start,
                format!("label {label} outside [0, {classes})"),
            ));
        }
        let before = features.len();
        for f in fields {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| Error::format(path, start, format!("bad feature `{f}`")))?;
            if !v.is_finite() {
                return Err(Error::format(path, start, "non-finite feature"));
            }
            features.push(v);
        }
        if features.len() - before != dim {
            return Err(Error::format(
                path,
                start,
                format!("row has {} features, header says {dim}", features.len() - before),
            ));
        }
        labels.push(label);
    }
    if labels.len() != n {
        return Err(Error::format(
            path,
            text.len() as u64,
            format!("expected {n} rows, found {}", labels.len()),
        ));
    }
    let features = Matrix::from_vec(n, dim, features)?;
    Dataset::new(features, labels, classes)
}

pub fn write(path: &Path, data: &Dataset) -> Result<()> {
    write_atomic(path, encode(data).as_bytes())
}

pub fn read(path: &Path) -> Result<Dataset> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| Error::format(path, e.valid_up_to() as u64, "dataset file is not UTF-8"))?;
    decode(text, path)
}
