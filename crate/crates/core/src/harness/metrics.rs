//! Metrics CSV files (LF line endings, shortest round-trip floats).
//!
//! - history: `epoch,split,ce,kld,total,top1`
//! - summary: `seed,rule,params,top1`, one row per seed followed by a `mean`
//!   row and a `std` row (sample standard deviation, 0 for a single seed)
//! - comparison: `rule,params,seeds,mean_top1,std_top1`

use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::trainer::TrainHistory;

pub const HISTORY_HEADER: [&str; 6] = ["epoch", "split", "ce", "kld", "total", "top1"];
pub const SUMMARY_HEADER: [&str; 4] = ["seed", "rule", "params", "top1"];
pub const COMPARISON_HEADER: [&str; 5] = ["rule", "params", "seeds", "mean_top1", "std_top1"];

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub seed: u64,
    pub rule: String,
    pub params: String,
    pub top1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (zero below two values).
pub fn aggregate(values: &[f64]) -> Aggregate {
    if values.is_empty() {
        return Aggregate {
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Aggregate { mean, std }
}

pub(crate) fn to_csv<I, R>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>())
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn history_csv(history: &TrainHistory) -> Vec<u8> {
    to_csv(
        &HISTORY_HEADER,
        history.records.iter().map(|r| {
            vec![
                r.epoch.to_string(),
                r.split.as_str().to_string(),
                r.ce.to_string(),
                r.kld.to_string(),
                r.total.to_string(),
                r.top1.to_string(),
            ]
        }),
    )
}

pub fn summary_csv(rows: &[SummaryRow]) -> Vec<u8> {
    let agg = aggregate(&rows.iter().map(|r| r.top1).collect::<Vec<_>>());
    let (rule, params) = rows
        .first()
        .map(|r| (r.rule.clone(), r.params.clone()))
        .unwrap_or_default();
    let per_seed = rows
        .iter()
        .map(|r| vec![r.seed.to_string(), r.rule.clone(), r.params.clone(), r.top1.to_string()]);
    let tail = [("mean", agg.mean), ("std", agg.std)]
        .into_iter()
        .map(|(k, v)| vec![k.to_string(), rule.clone(), params.clone(), v.to_string()]);
    to_csv(&SUMMARY_HEADER, per_seed.chain(tail))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub rule: String,
    pub params: String,
    pub seeds: usize,
    pub mean_top1: f64,
    pub std_top1: f64,
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> Vec<u8> {
    to_csv(
        &COMPARISON_HEADER,
        rows.iter().map(|r| {
            vec![
                r.rule.clone(),
                r.params.clone(),
                r.seeds.to_string(),
                r.mean_top1.to_string(),
                r.std_top1.to_string(),
            ]
        }),
    )
}

pub fn write_csv(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes)
}

/// Parsed summary file: per-seed rows plus the recorded aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryFile {
    pub rows: Vec<SummaryRow>,
    pub mean: f64,
    pub std: f64,
}

pub fn read_summary(path: &Path) -> Result<SummaryFile> {
    let bytes = super::read_bytes(path)?;
    parse_summary(&bytes, path)
}

pub fn parse_summary(bytes: &[u8], path: &Path) -> Result<SummaryFile> {
    let mut reader = csv::ReaderBuilder::new().from_reader(bytes);
    let bad = |pos: Option<&csv::Position>, msg: String| Error::format(path, pos.map_or(0, |p| p.byte()), msg);
    let header = reader.headers().map_err(|e| bad(e.position(), e.to_string()))?.clone();
    if header.iter().ne(SUMMARY_HEADER) {
        return Err(bad(None, format!("unexpected summary header {header:?}")));
    }
    let (mut rows, mut mean, mut std) = (Vec::new(), None, None);
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.position(), e.to_string()))?;
        let top1: f64 = rec[3]
            .parse()
            .map_err(|_| bad(rec.position(), format!("bad top1 `{}`", &rec[3])))?;
        match &rec[0] {
            "mean" => mean = Some(top1),
            "std" => std = Some(top1),
            s => rows.push(SummaryRow {
                seed: s.parse().map_err(|_| bad(rec.position(), format!("bad seed `{s}`")))?,
                rule: rec[1].to_string(),
                params: rec[2].to_string(),
                top1,
            }),
        }
    }
    match (mean, std) {
        (Some(mean), Some(std)) => Ok(SummaryFile { rows, mean, std }),
        _ => Err(bad(None, "summary lacks mean/std rows".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{EpochRecord, Split};

    #[test]
    fn aggregate_values() {
        let a = aggregate(&[0.5, 0.7, 0.9]);
        assert!((a.mean - 0.7).abs() < 1e-15);
        assert!((a.std - 0.2).abs() < 1e-15);
        assert_eq!(aggregate(&[0.3]).std, 0.0);
    }

    #[test]
    fn history_layout() {
        let h = TrainHistory {
            records: vec![EpochRecord {
                epoch: 0,
                split: Split::Val,
                ce: 0.5,
                kld: 0.0,
                total: 0.5,
                top1: 1.0,
            }],
            step_losses: vec![],
        };
        assert_eq!(
            String::from_utf8(history_csv(&h)).unwrap(),
            "epoch,split,ce,kld,total,top1\n0,val,0.5,0,0.5,1\n"
        );
    }

    #[test]
    fn summary_round_trip() {
        let rows = vec![
            SummaryRow {
                seed: 1,
                rule: "fixed".into(),
                params: "T=4".into(),
                top1: 0.25,
            },
            SummaryRow {
                seed: 2,
                rule: "fixed".into(),
                params: "T=4".into(),
                top1: 0.75,
            },
        ];
        let bytes = summary_csv(&rows);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(
            text.ends_with("mean,fixed,T=4,0.5\nstd,fixed,T=4,0.3535533905932738\n"),
            "{text}"
        );
        let back = parse_summary(&bytes, Path::new("s")).unwrap();
        assert_eq!(back.rows, rows);
        assert_eq!(back.mean, 0.5);
    }

    #[test]
    fn malformed_summary_is_format_error() {
        for bad in [
            "",
            "a,b\n",
            "seed,rule,params,top1\n1,x,y,z\n",
            "seed,rule,params,top1\n1,x,y,0.5\n",
        ] {
            let err = parse_summary(bad.as_bytes(), Path::new("s")).unwrap_err();
            assert_eq!(err.exit_code(), 3, "{bad:?}");
        }
    }
}
