//! Teacher/student logit comparisons.
//!
//! The class-gap matrix is a small-scale stand-in for comparing the
//! correlation structure of two models: entry `[c1][c2]` is the absolute
//! mean, over samples labelled `c1`, of `p_student[c2] - p_teacher[c2]`.
//! The `raw` variant softens both models at `T = 1`; the `normalized`
//! variant uses the per-sample standard-deviation temperature.

use crate::distill::{norm_soften, soften};
use crate::error::{Error, Result};
use crate::logitstats::{summarize, LogitRecord, DEFAULT_EPSILON};
use crate::numcore::Matrix;

use super::metrics::to_csv;

pub const SUMMARY_HEADER: [&str; 7] = ["model", "sample_id", "label", "sigma", "v_max", "v_min", "entropy"];
pub const MATRIX_HEADER: [&str; 4] = ["variant", "true_class", "class", "abs_mean_prob_gap"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Raw,
    Normalized,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Raw => "raw",
            Variant::Normalized => "normalized",
        }
    }
}

/// Checks that two caches describe the same samples in the same order.
pub fn check_aligned(teacher: &[LogitRecord], student: &[LogitRecord]) -> Result<usize> {
    if teacher.is_empty() {
        return Err(Error::contract("teacher cache is empty"));
    }
    if teacher.len() != student.len() {
        return Err(Error::contract(format!(
            "caches hold {} and {} records",
            teacher.len(),
            student.len()
        )));
    }
    let c = teacher[0].logits.len();
    for (i, (t, s)) in teacher.iter().zip(student).enumerate() {
        if t.logits.len() != c || s.logits.len() != c {
            return Err(Error::contract(format!("record {i}: class counts differ")));
        }
        if t.sample_id != s.sample_id || t.label != s.label {
            return Err(Error::contract(format!(
                "record {i}: teacher is sample {} label {}, student is sample {} label {}",
                t.sample_id, t.label, s.sample_id, s.label
            )));
        }
    }
    Ok(c)
}

/// The `C × C` class-gap matrix; rows of classes without samples are zero.
pub fn gap_matrix(teacher: &[LogitRecord], student: &[LogitRecord], variant: Variant, t_norm: f64) -> Result<Matrix> {
    let c = check_aligned(teacher, student)?;
    let probs = |logits: &[f64]| -> Result<Vec<f64>> {
        Ok(match variant {
            Variant::Raw => soften(logits, 1.0)?,
            Variant::Normalized => norm_soften(logits, t_norm, DEFAULT_EPSILON)?,
        }
        .into_vec())
    };
    let mut sums = Matrix::zeros(c, c);
    let mut counts = vec![0usize; c];
    for (t, s) in teacher.iter().zip(student) {
        if t.label >= c {
            return Err(Error::contract(format!("label {} outside [0, {c})", t.label)));
        }
        let (pt, ps) = (probs(&t.logits)?, probs(&s.logits)?);
        counts[t.label] += 1;
        for (k, out) in sums.row_mut(t.label).iter_mut().enumerate() {
            *out += ps[k] - pt[k];
        }
    }
    for (r, &n) in counts.iter().enumerate() {
        for v in sums.row_mut(r) {
            *v = if n == 0 { 0.0 } else { (*v / n as f64).abs() };
        }
    }
    Ok(sums)
}

pub fn frobenius(m: &Matrix) -> f64 {
    m.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn summary_csv(models: &[(&str, &[LogitRecord])]) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for (name, records) in models {
        let s = summarize(records)?;
        for (i, r) in records.iter().enumerate() {
            rows.push(vec![
                name.to_string(),
                r.sample_id.to_string(),
                r.label.to_string(),
                s.sigma[i].to_string(),
                s.v_max[i].to_string(),
                s.v_min[i].to_string(),
                s.entropy[i].to_string(),
            ]);
        }
    }
    Ok(to_csv(&SUMMARY_HEADER, rows))
}

pub fn matrix_csv(matrices: &[(Variant, &Matrix)]) -> Vec<u8> {
    let mut rows = Vec::new();
    for (variant, m) in matrices {
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                rows.push(vec![
                    variant.as_str().to_string(),
                    r.to_string(),
                    c.to_string(),
                    m.get(r, c).to_string(),
                ]);
            }
        }
    }
    to_csv(&MATRIX_HEADER, rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub raw: Matrix,
    pub normalized: Matrix,
    pub raw_frobenius: f64,
    pub normalized_frobenius: f64,
    pub summary_csv: Vec<u8>,
    pub matrix_csv: Vec<u8>,
}

pub fn analyze(teacher: &[LogitRecord], student: &[LogitRecord], t_norm: f64) -> Result<AnalysisReport> {
    let raw = gap_matrix(teacher, student, Variant::Raw, t_norm)?;
    let normalized = gap_matrix(teacher, student, Variant::Normalized, t_norm)?;
    Ok(AnalysisReport {
        raw_frobenius: frobenius(&raw),
        normalized_frobenius: frobenius(&normalized),
        summary_csv: summary_csv(&[("teacher", teacher), ("student", student)])?,
        matrix_csv: matrix_csv(&[(Variant::Raw, &raw), (Variant::Normalized, &normalized)]),
        raw,
        normalized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u32, label: usize, logits: &[f64]) -> LogitRecord {
        LogitRecord {
            sample_id: id,
            label,
            logits: logits.to_vec(),
        }
    }

    #[test]
    fn identical_caches_give_zero() {
        let t = vec![rec(0, 0, &[1.0, 2.0, 0.5]), rec(1, 2, &[0.0, -1.0, 3.0])];
        let r = analyze(&t, &t, 2.0).unwrap();
        assert!(r.raw.as_slice().iter().all(|&v| v == 0.0));
        assert!(r.normalized.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_entry() {
        // teacher uniform, student puts e/(e+1) on class 1
        let t = vec![rec(0, 0, &[0.0, 0.0])];
        let s = vec![rec(0, 0, &[0.0, 1.0])];
        let m = gap_matrix(&t, &s, Variant::Raw, 2.0).unwrap();
        let p1 = 1.0f64.exp() / (1.0 + 1.0f64.exp());
        assert!((m.get(0, 1) - (p1 - 0.5)).abs() < 1e-15);
        assert!((m.get(0, 0) - (p1 - 0.5)).abs() < 1e-15);
        assert_eq!(m.get(1, 0), 0.0);
    }

    #[test]
    fn misaligned_caches_are_contract_errors() {
        let t = vec![rec(0, 0, &[0.0, 0.0])];
        for s in [
            vec![],
            vec![rec(1, 0, &[0.0, 0.0])],
            vec![rec(0, 1, &[0.0, 0.0])],
            vec![rec(0, 0, &[0.0, 0.0, 1.0])],
        ] {
            assert_eq!(analyze(&t, &s, 2.0).unwrap_err().exit_code(), 4);
        }
    }

    #[test]
    fn csv_headers() {
        let t = vec![rec(0, 0, &[0.0, 1.0])];
        let r = analyze(&t, &t, 2.0).unwrap();
        assert!(r
            .summary_csv
            .starts_with(b"model,sample_id,label,sigma,v_max,v_min,entropy\nteacher,0,0,"));
        assert!(r
            .matrix_csv
            .starts_with(b"variant,true_class,class,abs_mean_prob_gap\nraw,0,0,0\n"));
    }
}
