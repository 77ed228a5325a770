//! Row kernels shared by the tape primitives and the plain-vector APIs, so
//! both paths produce bit-identical values.

/// Divisor used by the per-row standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StdKind {
    /// Bessel-corrected, divides by `C - 1`.
    #[default]
    Corrected,
    /// Divides by `C`.
    Population,
}

impl StdKind {
    pub(crate) fn divisor(self, len: usize) -> f64 {
        match self {
            StdKind::Corrected => (len - 1) as f64,
            StdKind::Population => len as f64,
        }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Two-pass standard deviation. Callers guarantee `values.len() >= 2`.
pub fn std_dev(values: &[f64], kind: StdKind) -> f64 {
    let mu = mean(values);
    let ss: f64 = values.iter().map(|&v| (v - mu) * (v - mu)).sum();
    (ss / kind.divisor(values.len())).sqrt()
}

/// Writes `x - logsumexp(x)` into `out` using max subtraction.
pub fn log_softmax_into(x: &[f64], out: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = x.iter().map(|&v| (v - m).exp()).sum();
    let ls = s.ln();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - m) - ls;
    }
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    log_softmax_into(x, &mut out);
    out
}

/// `ln((1/k) Σ_j exp(x_j))` for one coordinate across `k` inputs.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = values.iter().map(|&v| (v - m).exp()).sum();
    m + (s / values.len() as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_softmax_survives_large_inputs() {
        let out = log_softmax(&[1000.0, 0.0]);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], -1000.0);
    }

    #[test]
    fn log_mean_exp_single_is_identity() {
        for v in [-3.5, 0.0, 2.25, -1e-300] {
            assert_eq!(log_mean_exp(&[v]), v);
        }
    }

    #[test]
    fn std_kinds() {
        assert_eq!(std_dev(&[2.0, 0.0, -2.0], StdKind::Corrected), 2.0);
        let pop = std_dev(&[2.0, 0.0, -2.0], StdKind::Population);
        assert!((pop - (8.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
