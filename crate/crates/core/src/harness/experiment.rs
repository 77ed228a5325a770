//! Seed × rule orchestration behind `train-teacher` and `distill`.
//!
//! Output layout under the configured directory:
//!
//! ```text
//! teacher_seed{s}.nkdm, teacher_seed{s}_{train,val}.nkdl, teacher_history_seed{s}.csv
//! <rule dir>/student_seed{s}.nkdm, student_seed{s}_val.nkdl, history_seed{s}.csv, summary.csv
//! comparison.csv
//! ```
//!
//! With a single rule the rule directory is the output directory itself;
//! with several, each rule gets a subdirectory named by [`rule_slug`].

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{rule_columns, rule_slug, seed_path, ExperimentConfig, TeacherSource};
use super::metrics::{self, aggregate, ComparisonRow, SummaryRow};
use super::{cache, dataset, model};
use crate::error::Result;
use crate::logitstats::{LogitRecord, TemperatureRule};
use crate::trainer::{self, cache_teacher_logits, Dataset, Mlp, MlpSpec, TeacherCache, TrainConfig, TrainHistory};

/// SplitMix64 finalizer of `seed` mixed with a stream id.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TEACHER_INIT: u64 = 1;
const TEACHER_SHUFFLE: u64 = 2;
const STUDENT_INIT: u64 = 3;
const STUDENT_SHUFFLE: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherRun {
    pub model: Mlp,
    pub history: TrainHistory,
    /// Logits rounded through `f32`, exactly as they read back from disk.
    pub cache: TeacherCache,
    pub val_top1: f64,
}

/// Trains a teacher on labels only and caches its logits.
pub fn train_teacher(
    widths: &[usize],
    config: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    seed: u64,
) -> Result<TeacherRun> {
    let spec = MlpSpec::new(widths.to_vec(), derive_seed(seed, TEACHER_INIT))?;
    let config = TrainConfig {
        rule: None,
        seed: derive_seed(seed, TEACHER_SHUFFLE),
        ..config.clone()
    };
    let (model, history) = trainer::train(&spec, &config, train, Some(val), None)?;
    let cache = TeacherCache {
        train: cache::quantize(&cache_teacher_logits(&model, train)?),
        val: Some(cache::quantize(&cache_teacher_logits(&model, val)?)),
    };
    let val_top1 = trainer::evaluate(&model, val)?;
    Ok(TeacherRun {
        model,
        history,
        cache,
        val_top1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentRun {
    pub model: Mlp,
    pub history: TrainHistory,
    pub val_logits: Vec<LogitRecord>,
    pub val_top1: f64,
}

/// Trains one student. `rule = None` ignores the teacher and fits labels.
pub fn train_student(
    widths: &[usize],
    config: &TrainConfig,
    rule: Option<&TemperatureRule>,
    train: &Dataset,
    val: &Dataset,
    teacher: &TeacherCache,
    seed: u64,
) -> Result<StudentRun> {
    let spec = MlpSpec::new(widths.to_vec(), derive_seed(seed, STUDENT_INIT))?;
    let config = TrainConfig {
        rule: rule.cloned(),
        seed: derive_seed(seed, STUDENT_SHUFFLE),
        ..config.clone()
    };
    let teacher = rule.map(|_| teacher);
    let (model, history) = trainer::train(&spec, &config, train, Some(val), teacher)?;
    let val_logits = cache::quantize(&cache_teacher_logits(&model, val)?);
    let val_top1 = trainer::evaluate(&model, val)?;
    Ok(StudentRun {
        model,
        history,
        val_logits,
        val_top1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleOutcome {
    pub rule: Option<TemperatureRule>,
    pub dir: PathBuf,
    pub rows: Vec<SummaryRow>,
}

impl RuleOutcome {
    pub fn comparison(&self) -> ComparisonRow {
        let (rule, params) = rule_columns(self.rule.as_ref());
        let a = aggregate(&self.rows.iter().map(|r| r.top1).collect::<Vec<_>>());
        ComparisonRow {
            rule,
            params,
            seeds: self.rows.len(),
            mean_top1: a.mean,
            std_top1: a.std,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillOutcome {
    pub teacher_top1: Vec<(u64, f64)>,
    pub rules: Vec<RuleOutcome>,
}

pub fn rule_dir(cfg: &ExperimentConfig, rule: Option<&TemperatureRule>) -> PathBuf {
    if cfg.rules.len() == 1 {
        cfg.output.clone()
    } else {
        cfg.output.join(rule_slug(rule))
    }
}

pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    Ok((dataset::read(&cfg.train)?, dataset::read(&cfg.val)?))
}

fn write_teacher(out: &Path, seed: u64, run: &TeacherRun) -> Result<()> {
    model::write(&out.join(format!("teacher_seed{seed}.nkdm")), &run.model)?;
    cache::write(&out.join(format!("teacher_seed{seed}_train.nkdl")), &run.cache.train)?;
    if let Some(v) = &run.cache.val {
        cache::write(&out.join(format!("teacher_seed{seed}_val.nkdl")), v)?;
    }
    metrics::write_csv(
        &out.join(format!("teacher_history_seed{seed}.csv")),
        &metrics::history_csv(&run.history),
    )
}

/// Trains and writes one teacher per configured seed; returns `(seed, val top-1)`.
pub fn run_teachers(cfg: &ExperimentConfig) -> Result<Vec<(u64, f64)>> {
    let TeacherSource::Train { widths, config } = &cfg.teacher else {
        return Err(crate::error::Error::Config(
            "train-teacher needs `teacher_widths` in the config".into(),
        ));
    };
    let (train, val) = load_datasets(cfg)?;
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let run = train_teacher(widths, config, &train, &val, seed)?;
            write_teacher(&cfg.output, seed, &run)?;
            Ok((seed, run.val_top1))
        })
        .collect()
}

fn teacher_for_seed(
    cfg: &ExperimentConfig,
    train: &Dataset,
    val: &Dataset,
    seed: u64,
) -> Result<(TeacherCache, Option<f64>)> {
    match &cfg.teacher {
        TeacherSource::Train { widths, config } => {
            let run = train_teacher(widths, config, train, val, seed)?;
            write_teacher(&cfg.output, seed, &run)?;
            Ok((run.cache, Some(run.val_top1)))
        }
        TeacherSource::Cache { train: t, val: v } => {
            let cache = TeacherCache {
                train: cache::read(&seed_path(t, seed))?,
                val: v.as_ref().map(|v| cache::read(&seed_path(v, seed))).transpose()?,
            };
            Ok((cache, None))
        }
    }
}

/// Runs every seed (in parallel) and rule, writing all artifacts.
pub fn run_distill(cfg: &ExperimentConfig) -> Result<DistillOutcome> {
    cfg.validate()?;
    let (train, val) = load_datasets(cfg)?;
    let per_seed: Vec<(u64, Option<f64>, Vec<SummaryRow>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let (teacher, teacher_top1) = teacher_for_seed(cfg, &train, &val, seed)?;
            let rows = cfg
                .rules
                .par_iter()
                .map(|rule| {
                    let run = train_student(
                        &cfg.student_widths,
                        &cfg.student,
                        rule.as_ref(),
                        &train,
                        &val,
                        &teacher,
                        seed,
                    )?;
                    let dir = rule_dir(cfg, rule.as_ref());
                    model::write(&dir.join(format!("student_seed{seed}.nkdm")), &run.model)?;
                    cache::write(&dir.join(format!("student_seed{seed}_val.nkdl")), &run.val_logits)?;
                    metrics::write_csv(
                        &dir.join(format!("history_seed{seed}.csv")),
                        &metrics::history_csv(&run.history),
                    )?;
                    let (rule, params) = rule_columns(rule.as_ref());
                    Ok(SummaryRow {
                        seed,
                        rule,
                        params,
                        top1: run.val_top1,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((seed, teacher_top1, rows))
        })
        .collect::<Result<_>>()?;

    let rules: Vec<RuleOutcome> = cfg
        .rules
        .iter()
        .enumerate()
        .map(|(i, rule)| RuleOutcome {
            rule: rule.clone(),
            dir: rule_dir(cfg, rule.as_ref()),
            rows: per_seed.iter().map(|(_, _, rows)| rows[i].clone()).collect(),
        })
        .collect();
    for r in &rules {
        metrics::write_csv(&r.dir.join("summary.csv"), &metrics::summary_csv(&r.rows))?;
    }
    let comparison: Vec<ComparisonRow> = rules.iter().map(RuleOutcome::comparison).collect();
    metrics::write_csv(
        &cfg.output.join("comparison.csv"),
        &metrics::comparison_csv(&comparison),
    )?;
    Ok(DistillOutcome {
        teacher_top1: per_seed.iter().filter_map(|(s, t, _)| t.map(|t| (*s, t))).collect(),
        rules,
    })
}
