//! Finite-difference audit of every distillation loss with respect to the
//! student logits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::distill::{combine, cross_entropy_on, kld_on, Objective};
use crate::error::Result;
use crate::logitstats::{StdKind, TemperatureRule, DEFAULT_EPSILON};
use crate::numcore::{max_relative_error, value_and_grad, Matrix, Tape, Var};

pub const LOSSES: [&str; 6] = [
    "kd_loss",
    "multi_temp_kld",
    "normkd_loss",
    "maxval_loss",
    "range_loss",
    "combine",
];
pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const INSTANCES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub loss: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
}

impl SuiteRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

/// One random check point: `N ∈ 1..=4` samples, `C ∈ 3..=6` classes.
#[derive(Debug, Clone)]
pub struct Instance {
    pub student: Matrix,
    pub teacher: Matrix,
    pub labels: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub temperature: f64,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(1..=4);
    let c = rng.random_range(3..=6);
    let mut logits = |scale: f64| {
        let v: Vec<f64> = (0..n * c)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Matrix::from_vec(n, c, v).expect("shape")
    };
    let student = logits(1.5);
    let teacher = logits(2.5);
    Instance {
        labels: (0..n).map(|_| rng.random_range(0..c)).collect(),
        alpha: rng.random_range(0.1..=1.0),
        beta: rng.random_range(0.1..=1.0),
        temperature: rng.random_range(1.0..=8.0),
        student,
        teacher,
    }
}

/// Shifts every row so its maximum is at least 1, keeping the max-value
/// temperature well above its floor.
fn lift(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi < 1.0 {
            row.iter_mut().for_each(|v| *v += 1.0 - hi);
        }
    }
    out
}

type LossFn = Box<dyn Fn(&mut Tape, Var) -> Result<Var>>;

/// The loss named `loss` as a function of the student logits, plus the point to check it at.
pub fn loss_at(loss: &str, inst: &Instance) -> (LossFn, Matrix) {
    let teacher = inst.teacher.clone();
    let labels = inst.labels.clone();
    let (alpha, beta, t) = (inst.alpha, inst.beta, inst.temperature);
    let kld = move |rule: TemperatureRule, teacher: Matrix| -> LossFn {
        Box::new(move |tape: &mut Tape, x: Var| Ok(kld_on(tape, x, &teacher, &rule, StdKind::Corrected, false)?.value))
    };
    match loss {
        "kd_loss" => {
            let obj = Objective::with_rule(TemperatureRule::Fixed(t), alpha, beta);
            let f: LossFn = Box::new(move |tape, x| Ok(obj.build(tape, x, Some(&teacher), &labels)?.total));
            (f, inst.student.clone())
        }
        "multi_temp_kld" => {
            let temps: Vec<f64> = (0..1 + (t as usize) % 4).map(|k| 1.0 + k as f64 * t / 2.0).collect();
            (kld(TemperatureRule::MultiSet(temps), teacher), inst.student.clone())
        }
        "normkd_loss" => (
            kld(
                TemperatureRule::NormStd {
                    t_norm: t / 2.0,
                    epsilon: DEFAULT_EPSILON,
                },
                teacher,
            ),
            inst.student.clone(),
        ),
        "maxval_loss" => (
            kld(
                TemperatureRule::MaxVal {
                    t_v: t / 2.0,
                    epsilon: DEFAULT_EPSILON,
                },
                lift(&teacher),
            ),
            lift(&inst.student),
        ),
        "range_loss" => (
            kld(
                TemperatureRule::Range {
                    t_v: t / 2.0,
                    epsilon: DEFAULT_EPSILON,
                },
                teacher,
            ),
            inst.student.clone(),
        ),
        "combine" => {
            let f: LossFn = Box::new(move |tape, x| {
                let ce = cross_entropy_on(tape, x, &labels)?;
                let norm = TemperatureRule::norm_std(2.0);
                let a = kld_on(tape, x, &teacher, &norm, StdKind::Corrected, false)?.value;
                let b = kld_on(tape, x, &teacher, &TemperatureRule::Fixed(t), StdKind::Corrected, false)?.value;
                combine(tape, &[(alpha, ce), (beta, a), (1.0 - beta / 2.0, b)])
            });
            (f, inst.student.clone())
        }
        other => panic!("unknown loss {other}"),
    }
}

/// Max relative error of one loss at one point. `inject_fault` negates
/// the analytic gradient so the checker's sensitivity can be observed.
pub fn check(loss: &str, inst: &Instance, inject_fault: bool) -> Result<f64> {
    let (f, point) = loss_at(loss, inst);
    let (_, mut analytic) = value_and_grad(&f, &point)?;
    if inject_fault {
        analytic = analytic.map(|g| -g);
    }
    let value = |m: &Matrix| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(m.clone());
        let out = f(&mut tape, x)?;
        Ok(tape.scalar(out))
    };
    max_relative_error(value, &analytic, &point, STEP)
}

/// Runs `instances` random checks per loss; instance streams depend only on `seed` and the loss.
pub fn run_suite(instances: usize, seed: u64, inject_fault: bool) -> Result<Vec<SuiteRow>> {
    LOSSES
        .iter()
        .enumerate()
        .map(|(k, &loss)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut worst = 0.0f64;
            for _ in 0..instances {
                let inst = random_instance(&mut rng);
                worst = worst.max(check(loss, &inst, inject_fault)?);
            }
            Ok(SuiteRow {
                loss,
                instances,
                max_rel_error: worst,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_loss_passes_a_few_instances() {
        for row in run_suite(5, 11, false).unwrap() {
            assert!(row.passed(), "{row:?}");
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        for row in run_suite(1, 11, true).unwrap() {
            assert!(!row.passed(), "{row:?}");
        }
    }
}
