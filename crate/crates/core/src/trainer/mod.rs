//! Deterministic teacher/student MLP training.
//!
//! A run is fixed by `(spec, config, data)`: parameters come from the spec's
//! init seed, each epoch's batch order from a ChaCha8 stream keyed on
//! `(config.seed, epoch)`, and batches are processed serially.

mod mlp;
mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distill::{LossReport, Objective};
use crate::error::{Error, Result};
use crate::logitstats::{LogitRecord, StdKind, TemperatureRule};
use crate::numcore::{argmax, Matrix, Tape};

pub use mlp::{init_mlp, Layer, Mlp, MlpSpec};
pub use optim::{decayed_lr, NesterovSgd};

/// Labeled feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Dimension {
                op: "dataset",
                left: features.shape(),
                right: (labels.len(), 1),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::contract(format!("label {bad} outside [0, {classes})")));
        }
        if !features.is_finite() {
            return Err(Error::numeric("dataset features must be finite"));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Optimization recipe and distillation objective for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_rate: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `None` trains on labels only.
    pub rule: Option<TemperatureRule>,
    pub std_kind: StdKind,
    pub detach_student_temperature: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// 120 epochs with ×0.1 decay at 75/90/105, batch 64, lr 0.05, Nesterov
    /// 0.9, weight decay 5e-4, α = 0.1, β = 0.9, NormStd with `T_norm = 2`.
    fn default() -> Self {
        Self {
            epochs: 120,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay_epochs: vec![75, 90, 105],
            lr_decay_rate: 0.1,
            alpha: crate::distill::DEFAULT_ALPHA,
            beta: crate::distill::DEFAULT_BETA,
            rule: Some(TemperatureRule::norm_std(crate::distill::DEFAULT_T_NORM)),
            std_kind: StdKind::Corrected,
            detach_student_temperature: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::contract(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::contract(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::contract(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch size must be positive"));
        }
        if !(self.lr_decay_rate > 0.0 && self.lr_decay_rate.is_finite()) {
            return Err(Error::contract(format!(
                "decay rate must be > 0, got {}",
                self.lr_decay_rate
            )));
        }
        if self.lr_decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract(format!(
                "decay epochs must be strictly increasing: {:?}",
                self.lr_decay_epochs
            )));
        }
        if let Some(&last) = self.lr_decay_epochs.last() {
            if last >= self.epochs && self.epochs > 0 {
                return Err(Error::contract(format!(
                    "decay epoch {last} is not below the epoch count {}",
                    self.epochs
                )));
            }
        }
        if let Some(rule) = &self.rule {
            rule.validate()?;
        }
        Ok(())
    }

    /// The objective used when a teacher is available.
    pub fn objective(&self) -> Objective {
        Objective {
            rule: self.rule.clone(),
            alpha: self.alpha,
            beta: self.beta,
            std_kind: self.std_kind,
            detach_student_temperature: self.detach_student_temperature,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub ce: f64,
    pub kld: f64,
    pub total: f64,
    pub top1: f64,
}

/// Per-epoch metrics. Train rows are sample-weighted running averages over
/// the epoch's batches; val rows are computed after the epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Total loss of every optimizer step, before the update.
    pub step_losses: Vec<f64>,
}

impl TrainHistory {
    pub fn last(&self, split: Split) -> Option<&EpochRecord> {
        self.records.iter().rev().find(|r| r.split == split)
    }
}

/// Teacher logits aligned with the train and (optionally) val splits.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherCache {
    pub train: Vec<LogitRecord>,
    pub val: Option<Vec<LogitRecord>>,
}

fn teacher_matrix(records: &[LogitRecord], data: &Dataset, what: &str) -> Result<Matrix> {
    if records.len() != data.len() {
        return Err(Error::contract(format!(
            "{what} teacher cache has {} records for {} samples",
            records.len(),
            data.len()
        )));
    }
    for (i, (r, &label)) in records.iter().zip(&data.labels).enumerate() {
        if r.sample_id as usize != i {
            return Err(Error::contract(format!(
                "{what} teacher cache record {i} has sample id {}",
                r.sample_id
            )));
        }
        if r.logits.len() != data.classes {
            return Err(Error::contract(format!(
                "{what} teacher cache has {} classes, dataset has {}",
                r.logits.len(),
                data.classes
            )));
        }
        if r.label != label {
            return Err(Error::contract(format!(
                "{what} teacher cache record {i} has label {}, dataset has {label}",
                r.label
            )));
        }
    }
    Matrix::from_rows(&records.iter().map(|r| r.logits.as_slice()).collect::<Vec<_>>())
}

/// Batch order for `epoch`: a Fisher–Yates shuffle driven by ChaCha8 with
/// key `seed` and stream `epoch`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn count_correct(logits: &Matrix, labels: &[usize]) -> usize {
    logits
        .row_iter()
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

/// Trains `spec` on `train`. With a teacher cache the objective is
/// `config.objective()`; without one it is plain cross-entropy.
pub fn train(
    spec: &MlpSpec,
    config: &TrainConfig,
    train: &Dataset,
    val: Option<&Dataset>,
    teacher: Option<&TeacherCache>,
) -> Result<(Mlp, TrainHistory)> {
    spec.validate()?;
    config.validate()?;
    if train.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    for d in std::iter::once(train).chain(val) {
        if d.dim() != spec.input_dim() || d.classes != spec.classes() {
            return Err(Error::contract(format!(
                "dataset with D={} C={} does not fit MLP widths {:?}",
                d.dim(),
                d.classes,
                spec.widths
            )));
        }
    }
    let teacher_train = teacher.map(|t| teacher_matrix(&t.train, train, "train")).transpose()?;
    let teacher_val = match (teacher.and_then(|t| t.val.as_ref()), val) {
        (Some(records), Some(v)) => Some(teacher_matrix(records, v, "val")?),
        _ => None,
    };
    let objective = if teacher.is_some() {
        config.objective()
    } else {
        Objective::cross_entropy_only()
    };
    let val_objective = if teacher_val.is_some() {
        objective.clone()
    } else {
        Objective::cross_entropy_only()
    };

    let mut model = init_mlp(spec)?;
    let mut history = TrainHistory::default();
    let mut opt = NesterovSgd::new(config.momentum, config.weight_decay);
    let n = train.len();

    for epoch in 0..config.epochs {
        let lr = decayed_lr(
            config.learning_rate,
            &config.lr_decay_epochs,
            config.lr_decay_rate,
            epoch,
        );
        let order = epoch_order(config.seed, epoch, n);
        let (mut ce, mut kld, mut total, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for idx in order.chunks(config.batch_size) {
            let x = train.features.select_rows(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let t = teacher_train.as_ref().map(|m| m.select_rows(idx));

            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let (logits, leaves) = model.forward_on(&mut tape, xv)?;
            let terms = objective.build(&mut tape, logits, t.as_ref(), &labels)?;
            let report = objective.report(&tape, &terms);
            if !report.total.is_finite() {
                return Err(Error::numeric(format!("non-finite loss at epoch {epoch}")));
            }
            let grads = tape.backward(terms.total)?;
            let grads: Vec<Matrix> = leaves.iter().map(|&v| grads.wrt(v)).collect();
            correct += count_correct(tape.value(logits), &labels);
            opt.step(model.params_mut(), &grads, lr);

            let b = idx.len() as f64;
            ce += report.ce_part * b;
            kld += report.kld_part * b;
            total += report.total * b;
            history.step_losses.push(report.total);
        }
        let nf = n as f64;
        history.records.push(EpochRecord {
            epoch,
            split: Split::Train,
            ce: ce / nf,
            kld: kld / nf,
            total: total / nf,
            top1: correct as f64 / nf,
        });
        if let Some(v) = val.filter(|v| !v.is_empty()) {
            let logits = model.forward(&v.features)?;
            let r = val_objective.evaluate(&logits, teacher_val.as_ref(), &v.labels)?;
            history.records.push(EpochRecord {
                epoch,
                split: Split::Val,
                ce: r.ce_part,
                kld: r.kld_part,
                total: r.total,
                top1: count_correct(&logits, &v.labels) as f64 / v.len() as f64,
            });
        }
    }
    Ok((model, history))
}

/// Loss of `model` on `data` under `objective`.
pub fn evaluate_loss(
    model: &Mlp,
    objective: &Objective,
    data: &Dataset,
    teacher: Option<&[LogitRecord]>,
) -> Result<LossReport> {
    let logits = model.forward(&data.features)?;
    let t = teacher.map(|r| teacher_matrix(r, data, "evaluation")).transpose()?;
    objective.evaluate(&logits, t.as_ref(), &data.labels)
}

/// Top-1 accuracy; ties in the logits go to the lowest class index.
pub fn evaluate(model: &Mlp, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty dataset"));
    }
    let logits = model.forward(&data.features)?;
    Ok(count_correct(&logits, &data.labels) as f64 / data.len() as f64)
}

/// Raw logits of every sample, in dataset order, with `sample_id` = row index.
pub fn cache_teacher_logits(model: &Mlp, data: &Dataset) -> Result<Vec<LogitRecord>> {
    let logits = model.forward(&data.features)?;
    logits
        .row_iter()
        .zip(&data.labels)
        .enumerate()
        .map(|(i, (row, &label))| {
            let id = u32::try_from(i).map_err(|_| Error::contract("more than u32::MAX samples"))?;
            LogitRecord::new(id, label, row.to_vec())
        })
        .collect()
}
