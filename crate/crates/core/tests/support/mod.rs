//! Brute-force reference evaluators in 256-bit MPFR arithmetic, plus
//! shared random-input helpers for the integration tests.
#![allow(dead_code)]

use normkd_core::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rug::ops::Pow;
use rug::Float;

pub const PREC: u32 = 256;

fn f(v: f64) -> Float {
    Float::with_val(PREC, v)
}

fn sum(vals: impl IntoIterator<Item = Float>) -> Float {
    vals.into_iter().fold(f(0.0), |acc, v| acc + v)
}

/// `softmax(z / T)` without max subtraction; MPFR's exponent range makes it unnecessary.
pub fn softmax_big(logits: &[f64], t: &Float) -> Vec<Float> {
    let exps: Vec<Float> = logits.iter().map(|&z| (f(z) / t.clone()).exp()).collect();
    let total = sum(exps.iter().cloned());
    exps.into_iter().map(|e| e / total.clone()).collect()
}

pub fn softmax(logits: &[f64], t: f64) -> Vec<f64> {
    softmax_big(logits, &f(t)).iter().map(Float::to_f64).collect()
}

pub fn std_big(logits: &[f64], corrected: bool) -> Float {
    let n = logits.len() as f64;
    let mean = sum(logits.iter().map(|&v| f(v))) / n;
    let ss = sum(logits.iter().map(|&v| (f(v) - mean.clone()).pow(2u32)));
    let div = if corrected { n - 1.0 } else { n };
    (ss / div).sqrt()
}

/// Corrected sample standard deviation.
pub fn sample_std(logits: &[f64]) -> f64 {
    std_big(logits, true).to_f64()
}

/// `softmax(z / (max(σ, ε)·T_norm))`.
pub fn norm_soften(logits: &[f64], t_norm: f64, epsilon: f64) -> Vec<f64> {
    let s = std_big(logits, true);
    let s = if s < epsilon { f(epsilon) } else { s };
    softmax_big(logits, &(s * t_norm)).iter().map(Float::to_f64).collect()
}

/// `Σ p ln(p / q)` with `0·ln 0 = 0`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    kl_big(
        &p.iter().map(|&v| f(v)).collect::<Vec<_>>(),
        &q.iter().map(|&v| f(v)).collect::<Vec<_>>(),
    )
    .to_f64()
}

pub fn kl_big(p: &[Float], q: &[Float]) -> Float {
    sum(p.iter().zip(q).filter(|(a, _)| !a.is_zero()).map(|(a, b)| {
        let ratio = a.clone() / b.clone();
        a.clone() * ratio.ln()
    }))
}

pub fn multi_temp_big(logits: &[f64], temps: &[f64]) -> Vec<Float> {
    let k = temps.len() as f64;
    let per: Vec<Vec<Float>> = temps.iter().map(|&t| softmax_big(logits, &f(t))).collect();
    (0..logits.len())
        .map(|c| sum(per.iter().map(|p| p[c].clone())) / k)
        .collect()
}

pub fn multi_temp(logits: &[f64], temps: &[f64]) -> Vec<f64> {
    multi_temp_big(logits, temps).iter().map(Float::to_f64).collect()
}

/// `x · W + b` with every product and sum exact to 256 bits.
pub fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.rows() * w.cols());
    for r in 0..x.rows() {
        for c in 0..w.cols() {
            let dot = sum((0..x.cols()).map(|k| f(x.get(r, k)) * w.get(k, c)));
            out.push((dot + b.get(0, c)).to_f64());
        }
    }
    out
}

/// Batch KLD under one temperature per sample, weighted per sample and averaged.
pub fn weighted_kld(student: &Matrix, teacher: &Matrix, ts: &[f64], tt: &[f64], w: &[f64]) -> f64 {
    let n = student.rows();
    let total = sum((0..n).map(|r| {
        let ps = softmax_big(student.row(r), &f(ts[r]));
        let pt = softmax_big(teacher.row(r), &f(tt[r]));
        kl_big(&pt, &ps) * w[r]
    }));
    (total / n as f64).to_f64()
}

/// Max elementwise relative error `|a - b| / |b|` (absolute when `b == 0`).
pub fn max_rel(actual: &[f64], expected: &[f64]) -> f64 {
    assert_eq!(actual.len(), expected.len());
    actual
        .iter()
        .zip(expected)
        .map(|(a, e)| {
            let d = (a - e).abs();
            if *e == 0.0 {
                d
            } else {
                d / e.abs()
            }
        })
        .fold(0.0, f64::max)
}

pub fn rel(actual: f64, expected: f64) -> f64 {
    max_rel(&[actual], &[expected])
}

/// `c` logits drawn uniformly from `[-scale, scale]`.
pub fn random_logits(rng: &mut ChaCha8Rng, c: usize, scale: f64) -> Vec<f64> {
    (0..c).map(|_| rng.random_range(-scale..=scale)).collect()
}

/// Logits with class count in `2..=max_c` and a random scale in `[0.1, 20]`.
pub fn random_vector(rng: &mut ChaCha8Rng, max_c: usize) -> Vec<f64> {
    let c = rng.random_range(2..=max_c);
    let scale = rng.random_range(0.1..=20.0);
    random_logits(rng, c, scale)
}
