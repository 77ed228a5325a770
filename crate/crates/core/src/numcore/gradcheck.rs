//! Central finite-difference verification of tape gradients.

use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Max over coordinates of `|analytic - numeric| / max(1e-12, |numeric|)`,
/// where `numeric` is the central difference of `value` at `point`.
pub fn max_relative_error(
    value: impl Fn(&Matrix) -> Result<f64>,
    analytic: &Matrix,
    point: &Matrix,
    step: f64,
) -> Result<f64> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::contract(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    point.expect_same_shape(analytic, "grad_check")?;
    let numeric = central_differences(&value, point, step)?;
    Ok(analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(&a, &n)| (a - n).abs() / n.abs().max(1e-12))
        .fold(0.0, f64::max))
}

/// Central-difference gradient of `value` at `point`.
pub fn central_differences(value: impl Fn(&Matrix) -> Result<f64>, point: &Matrix, step: f64) -> Result<Matrix> {
    let mut probe = point.clone();
    let mut out = Matrix::zeros(point.rows(), point.cols());
    for i in 0..point.len() {
        let x0 = point.as_slice()[i];
        probe.as_mut_slice()[i] = x0 + step;
        let up = value(&probe)?;
        probe.as_mut_slice()[i] = x0 - step;
        let down = value(&probe)?;
        probe.as_mut_slice()[i] = x0;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite function value while probing coordinate {i}"
            )));
        }
        out.as_mut_slice()[i] = (up - down) / (2.0 * step);
    }
    Ok(out)
}

/// Evaluates `f` on a fresh tape with `point` as the only leaf and returns
/// the value together with the tape gradient.
pub fn value_and_grad(f: &impl Fn(&mut Tape, Var) -> Result<Var>, point: &Matrix) -> Result<(f64, Matrix)> {
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let out = f(&mut tape, x)?;
    let grads = tape.backward(out)?;
    Ok((tape.scalar(out), grads.wrt(x)))
}

/// Checks the tape gradient of the scalar function `f` at `point`.
pub fn grad_check(f: impl Fn(&mut Tape, Var) -> Result<Var>, point: &Matrix, step: f64) -> Result<f64> {
    let (v, analytic) = value_and_grad(&f, point)?;
    if !v.is_finite() {
        return Err(Error::numeric("non-finite function value at the check point"));
    }
    let value = |m: &Matrix| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(m.clone());
        let out = f(&mut tape, x)?;
        Ok(tape.scalar(out))
    };
    max_relative_error(value, &analytic, point, step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_near_exact() {
        let p = Matrix::from_rows(&[[0.3, -1.2, 4.0], [2.0, 0.5, -0.7]]).unwrap();
        let err = grad_check(|t, x| Ok(t.sum(x)), &p, 1e-5).unwrap();
        assert!(err <= 1e-10, "err = {err}");
    }

    #[test]
    fn doubled_gradient_is_caught() {
        let p = Matrix::from_rows(&[[0.3, -1.2, 4.0]]).unwrap();
        let f = |m: &Matrix| Ok(m.as_slice().iter().map(|v| v * v).sum::<f64>());
        let wrong = p.map(|v| 2.0 * (2.0 * v));
        let err = max_relative_error(f, &wrong, &p, 1e-5).unwrap();
        assert!(err >= 0.5);
    }

    #[test]
    fn bad_step_rejected() {
        let p = Matrix::scalar(1.0);
        assert!(grad_check(|t, x| Ok(t.sum(x)), &p, 0.0).is_err());
    }

    #[test]
    fn non_finite_probe_is_numeric_error() {
        let p = Matrix::scalar(0.0);
        let f = |m: &Matrix| Ok(if m.as_slice()[0] > 0.0 { f64::INFINITY } else { 0.0 });
        let err = max_relative_error(f, &Matrix::scalar(0.0), &p, 1e-5).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }
}
