//! Logit distillation objectives.
//!
//! All KL terms are `KL(teacher ‖ student) = Σ p_t (ln p_t - ln p_s)`,
//! summed over classes per sample and averaged over the batch. Teacher
//! logits never receive gradient. Cross-entropy always uses the raw student
//! logits at temperature 1; temperature rules only touch the KL term.
//!
//! Per-sample rules ([`TemperatureRule::NormStd`], `MaxVal`, `Range`) soften
//! each row with its own temperature. The student's temperature is computed
//! on the tape from the live student logits, so its gradient flows through
//! the statistic unless [`Objective::detach_student_temperature`] is set.
//! Each sample's KL is weighted by the square of the teacher's temperature.

use crate::error::{Error, Result};
use crate::logitstats::{self, StdKind, TemperatureRule, Temperatures};
use crate::numcore::{kernels, Matrix, Tape, Var};

/// Default per-sample temperature scale.
pub const DEFAULT_T_NORM: f64 = 2.0;
/// Default cross-entropy weight.
pub const DEFAULT_ALPHA: f64 = 0.1;
/// Default KL weight.
pub const DEFAULT_BETA: f64 = 0.9;

const SIMPLEX_TOL: f64 = 1e-12;

/// A probability vector over `C` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftDistribution {
    probs: Vec<f64>,
}

impl SoftDistribution {
    /// Validates entries in `[0, 1]` summing to 1 within `1e-12`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::contract("empty distribution"));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::contract(format!("probability {p} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::contract(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    fn from_log_probs(logp: &[f64]) -> Self {
        Self {
            probs: logp.iter().map(|l| l.exp()).collect(),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::contract(format!("temperature must be finite and > 0, got {t}")))
    }
}

/// `ln softmax(z / T)`.
pub fn log_soften(logits: &[f64], t: f64) -> Result<Vec<f64>> {
    check_temperature(t)?;
    if logits.is_empty() {
        return Err(Error::contract("empty logit vector"));
    }
    let scaled: Vec<f64> = logits.iter().map(|v| v / t).collect();
    Ok(kernels::log_softmax(&scaled))
}

/// `softmax(z / T)`.
pub fn soften(logits: &[f64], t: f64) -> Result<SoftDistribution> {
    Ok(SoftDistribution::from_log_probs(&log_soften(logits, t)?))
}

/// Softens with `max(σ(z), ε) · T_norm`, σ the corrected standard deviation.
pub fn norm_soften(logits: &[f64], t_norm: f64, epsilon: f64) -> Result<SoftDistribution> {
    let rule = TemperatureRule::NormStd { t_norm, epsilon };
    match logitstats::temperature_for(&rule, logits)? {
        Temperatures::Single(t) => soften(logits, t),
        Temperatures::Set(_) => unreachable!("per-sample rule yields one temperature"),
    }
}

/// `KL(p_teacher ‖ p_student)` with `0 · ln 0 = 0`.
pub fn kl_divergence(p_teacher: &SoftDistribution, p_student: &SoftDistribution) -> Result<f64> {
    if p_teacher.len() != p_student.len() {
        return Err(Error::Dimension {
            op: "kl_divergence",
            left: (1, p_teacher.len()),
            right: (1, p_student.len()),
        });
    }
    let mut kl = 0.0;
    for (i, (&pt, &ps)) in p_teacher.probs.iter().zip(&p_student.probs).enumerate() {
        if pt == 0.0 {
            continue;
        }
        if ps == 0.0 {
            return Err(Error::numeric(format!(
                "student probability of class {i} is 0 where the teacher's is {pt}"
            )));
        }
        kl += pt * (pt.ln() - ps.ln());
    }
    Ok(kl.max(0.0))
}

fn log_multi_soften(logits: &[f64], temps: &[f64]) -> Result<Vec<f64>> {
    if temps.is_empty() {
        return Err(Error::contract("temperature set is empty"));
    }
    let per_t: Vec<Vec<f64>> = temps.iter().map(|&t| log_soften(logits, t)).collect::<Result<_>>()?;
    let mut buf = vec![0.0; temps.len()];
    Ok((0..logits.len())
        .map(|c| {
            for (b, lp) in buf.iter_mut().zip(&per_t) {
                *b = lp[c];
            }
            kernels::log_mean_exp(&buf)
        })
        .collect())
}

/// Mean of `soften(z, t_i)` over the temperature set.
pub fn multi_temp_prediction(logits: &[f64], temps: &[f64]) -> Result<SoftDistribution> {
    Ok(SoftDistribution::from_log_probs(&log_multi_soften(logits, temps)?))
}

/// Decomposed loss value.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub ce_part: f64,
    pub kld_part: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Squared teacher temperature of each sample (`T²`, `T_mul²` or per-sample).
    pub per_sample_weight: Vec<f64>,
    pub n: usize,
}

/// Tape handles of one loss evaluation.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub total: Var,
    pub ce: Var,
    pub kld: Option<Var>,
    pub per_sample_weight: Vec<f64>,
    pub n: usize,
}

/// α·CE + β·KL, with the KL term chosen by `rule`. `rule = None` trains on
/// labels alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub rule: Option<TemperatureRule>,
    pub alpha: f64,
    pub beta: f64,
    pub std_kind: StdKind,
    /// Treat the student's per-sample temperature as a constant.
    pub detach_student_temperature: bool,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            rule: Some(TemperatureRule::norm_std(DEFAULT_T_NORM)),
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            std_kind: StdKind::Corrected,
            detach_student_temperature: false,
        }
    }
}

impl Objective {
    /// Plain cross-entropy with unit weight.
    pub fn cross_entropy_only() -> Self {
        Self {
            rule: None,
            alpha: 1.0,
            beta: 0.0,
            ..Self::default()
        }
    }

    pub fn with_rule(rule: TemperatureRule, alpha: f64, beta: f64) -> Self {
        Self {
            rule: Some(rule),
            alpha,
            beta,
            ..Self::default()
        }
    }

    /// Records the objective on `tape`. `teacher` is required whenever a
    /// rule is set.
    pub fn build(
        &self,
        tape: &mut Tape,
        student: Var,
        teacher: Option<&Matrix>,
        labels: &[usize],
    ) -> Result<LossTerms> {
        let ce = cross_entropy_on(tape, student, labels)?;
        let (kld, per_sample_weight) = match &self.rule {
            None => (None, Vec::new()),
            Some(rule) => {
                let teacher = teacher.ok_or_else(|| Error::contract("distillation rule set but no teacher logits"))?;
                let k = kld_on(
                    tape,
                    student,
                    teacher,
                    rule,
                    self.std_kind,
                    self.detach_student_temperature,
                )?;
                (Some(k.value), k.weights)
            }
        };
        let mut terms = Vec::with_capacity(2);
        if self.alpha != 0.0 {
            terms.push((self.alpha, ce));
        }
        if let Some(k) = kld {
            if self.beta != 0.0 {
                terms.push((self.beta, k));
            }
        }
        if terms.is_empty() {
            terms.push((0.0, ce));
        }
        let total = tape.linear(&terms)?;
        Ok(LossTerms {
            total,
            ce,
            kld,
            per_sample_weight,
            n: labels.len(),
        })
    }

    pub fn report(&self, tape: &Tape, terms: &LossTerms) -> LossReport {
        LossReport {
            total: tape.scalar(terms.total),
            ce_part: tape.scalar(terms.ce),
            kld_part: terms.kld.map_or(0.0, |k| tape.scalar(k)),
            alpha: self.alpha,
            beta: self.beta,
            per_sample_weight: terms.per_sample_weight.clone(),
            n: terms.n,
        }
    }

    pub fn evaluate(&self, student: &Matrix, teacher: Option<&Matrix>, labels: &[usize]) -> Result<LossReport> {
        let mut tape = Tape::new();
        let s = tape.constant(student.clone());
        let terms = self.build(&mut tape, s, teacher, labels)?;
        Ok(self.report(&tape, &terms))
    }

    /// Loss report and gradient of the total with respect to the student logits.
    pub fn value_and_grad(
        &self,
        student: &Matrix,
        teacher: Option<&Matrix>,
        labels: &[usize],
    ) -> Result<(LossReport, Matrix)> {
        let mut tape = Tape::new();
        let s = tape.leaf(student.clone());
        let terms = self.build(&mut tape, s, teacher, labels)?;
        let grads = tape.backward(terms.total)?;
        Ok((self.report(&tape, &terms), grads.wrt(s)))
    }
}

/// Mean cross-entropy of `softmax(student)` against integer labels.
pub fn cross_entropy_on(tape: &mut Tape, student: Var, labels: &[usize]) -> Result<Var> {
    let logp = tape.log_softmax(student);
    let picked = tape.pick(logp, labels)?;
    let m = tape.mean(picked)?;
    Ok(tape.scale(m, -1.0))
}

/// KL term on the tape together with its per-sample weights.
#[derive(Debug, Clone)]
pub struct KldTerm {
    pub value: Var,
    pub weights: Vec<f64>,
}

/// Weighted, batch-averaged `KL(teacher ‖ student)` under `rule`.
pub fn kld_on(
    tape: &mut Tape,
    student: Var,
    teacher: &Matrix,
    rule: &TemperatureRule,
    std_kind: StdKind,
    detach_student_temperature: bool,
) -> Result<KldTerm> {
    rule.validate()?;
    let shape = tape.value(student).shape();
    if shape != teacher.shape() {
        return Err(Error::Dimension {
            op: "distillation",
            left: shape,
            right: teacher.shape(),
        });
    }
    let n = shape.0;
    if n == 0 {
        return Err(Error::contract("empty batch"));
    }
    match rule {
        TemperatureRule::Fixed(t) => {
            let col = tape.constant(Matrix::filled(n, 1, *t));
            softened_kl(tape, student, col, teacher, &vec![*t; n], vec![t * t; n])
        }
        TemperatureRule::MultiSet(temps) => {
            let t_mul = temps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            multi_softened_kl(tape, student, teacher, temps, vec![t_mul * t_mul; n])
        }
        TemperatureRule::NormStd { .. } | TemperatureRule::MaxVal { .. } | TemperatureRule::Range { .. } => {
            if shape.1 < 2 {
                return Err(Error::contract("per-sample temperatures need at least 2 classes"));
            }
            let teacher_t: Vec<f64> = teacher
                .row_iter()
                .map(|row| match logitstats::temperature_with(rule, row, std_kind)? {
                    Temperatures::Single(t) => Ok(t),
                    Temperatures::Set(_) => unreachable!("per-sample rule yields one temperature"),
                })
                .collect::<Result<_>>()?;
            let weights = teacher_t.iter().map(|t| t * t).collect();
            let src = if detach_student_temperature {
                tape.detach(student)
            } else {
                student
            };
            let col = student_temperature(tape, src, rule, std_kind)?;
            softened_kl(tape, student, col, teacher, &teacher_t, weights)
        }
    }
}

fn student_temperature(tape: &mut Tape, z: Var, rule: &TemperatureRule, kind: StdKind) -> Result<Var> {
    let (stat, epsilon, scale) = match rule {
        TemperatureRule::NormStd { t_norm, epsilon } => (tape.row_std(z, kind)?, *epsilon, *t_norm),
        TemperatureRule::MaxVal { t_v, epsilon } => (tape.row_max(z)?, *epsilon, *t_v),
        TemperatureRule::Range { t_v, epsilon } => {
            let hi = tape.row_max(z)?;
            let lo = tape.row_min(z)?;
            (tape.sub(hi, lo)?, *epsilon, *t_v)
        }
        _ => unreachable!("fixed rules have no per-sample statistic"),
    };
    let floored = tape.floor_at(stat, epsilon);
    Ok(tape.scale(floored, scale))
}

fn teacher_targets(teacher: &Matrix, log_row: impl Fn(&[f64], usize) -> Result<Vec<f64>>) -> Result<(Matrix, Matrix)> {
    let (n, c) = teacher.shape();
    let mut logp = Matrix::zeros(n, c);
    for (r, row) in teacher.row_iter().enumerate() {
        logp.row_mut(r).copy_from_slice(&log_row(row, r)?);
    }
    let p = logp.map(f64::exp);
    Ok((logp, p))
}

fn weighted_kl(tape: &mut Tape, logp_student: Var, logp_t: Matrix, p_t: Matrix, weights: Vec<f64>) -> Result<KldTerm> {
    let lt = tape.constant(logp_t);
    let pt = tape.constant(p_t);
    let diff = tape.sub(lt, logp_student)?;
    let terms = tape.mul(pt, diff)?;
    let per_sample = tape.sum_rows(terms);
    let w = tape.constant(Matrix::column(weights.clone()));
    let weighted = tape.mul(per_sample, w)?;
    let value = tape.mean(weighted)?;
    Ok(KldTerm { value, weights })
}

fn softened_kl(
    tape: &mut Tape,
    student: Var,
    student_t: Var,
    teacher: &Matrix,
    teacher_t: &[f64],
    weights: Vec<f64>,
) -> Result<KldTerm> {
    let scaled = tape.div_col(student, student_t)?;
    let logp_s = tape.log_softmax(scaled);
    let (logp_t, p_t) = teacher_targets(teacher, |row, r| log_soften(row, teacher_t[r]))?;
    weighted_kl(tape, logp_s, logp_t, p_t, weights)
}

fn multi_softened_kl(
    tape: &mut Tape,
    student: Var,
    teacher: &Matrix,
    temps: &[f64],
    weights: Vec<f64>,
) -> Result<KldTerm> {
    let n = teacher.rows();
    let mut parts = Vec::with_capacity(temps.len());
    for &t in temps {
        let col = tape.constant(Matrix::filled(n, 1, t));
        let scaled = tape.div_col(student, col)?;
        parts.push(tape.log_softmax(scaled));
    }
    let logp_s = tape.log_mean_exp(&parts)?;
    let (logp_t, p_t) = teacher_targets(teacher, |row, _| log_multi_soften(row, temps))?;
    weighted_kl(tape, logp_s, logp_t, p_t, weights)
}

/// Weighted sum of scalar loss nodes.
pub fn combine(tape: &mut Tape, terms: &[(f64, Var)]) -> Result<Var> {
    if terms.is_empty() {
        return Err(Error::contract("combine needs at least one term"));
    }
    for &(_, v) in terms {
        if tape.value(v).shape() != (1, 1) {
            return Err(Error::contract("combine terms must be scalar losses"));
        }
    }
    tape.linear(terms)
}

/// Classic KD: `α·CE(T=1) + β·T²·KL` at one temperature.
pub fn kd_loss(
    student: &Matrix,
    teacher: &Matrix,
    labels: &[usize],
    t: f64,
    alpha: f64,
    beta: f64,
) -> Result<LossReport> {
    Objective::with_rule(TemperatureRule::Fixed(t), alpha, beta).evaluate(student, Some(teacher), labels)
}

/// `T_mul² · mean KL(p̄_t ‖ p̄_s)` with `T_mul = max(temps)`.
pub fn multi_temp_kld(student: &Matrix, teacher: &Matrix, temps: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(student.clone());
    let rule = TemperatureRule::MultiSet(temps.to_vec());
    let k = kld_on(&mut tape, s, teacher, &rule, StdKind::Corrected, false)?;
    Ok(tape.scalar(k.value))
}

/// Normalized-temperature KL alone (`alpha = 0`, `beta = 1`, `ce_part = 0`).
pub fn normkd_loss(student: &Matrix, teacher: &Matrix, t_norm: f64, epsilon: f64) -> Result<LossReport> {
    let mut tape = Tape::new();
    let s = tape.constant(student.clone());
    let rule = TemperatureRule::NormStd { t_norm, epsilon };
    let k = kld_on(&mut tape, s, teacher, &rule, StdKind::Corrected, false)?;
    let v = tape.scalar(k.value);
    Ok(LossReport {
        total: v,
        ce_part: 0.0,
        kld_part: v,
        alpha: 0.0,
        beta: 1.0,
        n: k.weights.len(),
        per_sample_weight: k.weights,
    })
}

/// α·CE + β·KL with the KL term selected by `rule`.
pub fn distill_loss(
    rule: &TemperatureRule,
    student: &Matrix,
    teacher: &Matrix,
    labels: &[usize],
    alpha: f64,
    beta: f64,
) -> Result<LossReport> {
    Objective::with_rule(rule.clone(), alpha, beta).evaluate(student, Some(teacher), labels)
}
