use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use normkd_core::distill::{DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_T_NORM};
use normkd_core::harness::config::{parse_rule_choice, ExperimentConfig};
use normkd_core::harness::datagen::{generate, BlobSpec};
use normkd_core::harness::{analysis, cache, dataset, experiment, gradsuite, model, write_atomic, SEED_ENV};
use normkd_core::{trainer, Error, Objective, Result};

#[derive(Parser)]
#[command(
    name = "normkd",
    version,
    about = "Logit distillation with fixed, multi and normalized temperatures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-blob train/val dataset pair.
    GenData {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        per_class: usize,
        /// Minimum distance between class centers.
        #[arg(long)]
        margin: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory receiving train.csv and val.csv.
        #[arg(long)]
        output: PathBuf,
    },
    /// Train one teacher per configured seed and cache its logits.
    TrainTeacher {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train students under the configured rules, one run per seed.
    Distill {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the config's rule list; repeat for several rules.
        #[arg(long = "rule")]
        rules: Vec<String>,
    },
    /// Report top-1 accuracy (and a loss, given a teacher cache) of a model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        teacher_cache: Option<PathBuf>,
        #[arg(long, default_value = "normstd:2")]
        rule: String,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_BETA)]
        beta: f64,
    },
    /// Compare teacher and student logit caches.
    Analyze {
        #[arg(long)]
        teacher_cache: PathBuf,
        #[arg(long)]
        student_cache: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_T_NORM)]
        t_norm: f64,
    },
    /// Finite-difference check of every loss gradient.
    GradCheck {
        #[arg(long, default_value_t = gradsuite::INSTANCES)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    let env = std::env::var(SEED_ENV).ok();
    cfg.apply_seed_override(env.as_deref())?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData {
            classes,
            dim,
            per_class,
            margin,
            seed,
            output,
        } => {
            let (train, val) = generate(&BlobSpec {
                classes,
                dim,
                per_class,
                margin,
                seed,
            })?;
            dataset::write(&output.join("train.csv"), &train)?;
            dataset::write(&output.join("val.csv"), &val)?;
            println!(
                "wrote {} train and {} val samples to {}",
                train.len(),
                val.len(),
                output.display()
            );
        }
        Command::TrainTeacher { config } => {
            let cfg = load_config(&config)?;
            for (seed, top1) in experiment::run_teachers(&cfg)? {
                println!("teacher seed {seed}: val top1 {top1:.4}");
            }
        }
        Command::Distill { config, rules } => {
            let mut cfg = load_config(&config)?;
            if !rules.is_empty() {
                cfg.rules = rules.iter().map(|r| parse_rule_choice(r)).collect::<Result<_>>()?;
            }
            let out = experiment::run_distill(&cfg)?;
            for (seed, top1) in &out.teacher_top1 {
                println!("teacher seed {seed}: val top1 {top1:.4}");
            }
            for r in &out.rules {
                let c = r.comparison();
                println!(
                    "{:<10} {:<28} mean top1 {:.4} ± {:.4} over {} seeds",
                    c.rule, c.params, c.mean_top1, c.std_top1, c.seeds
                );
            }
        }
        Command::Eval {
            model: path,
            data,
            teacher_cache,
            rule,
            alpha,
            beta,
        } => {
            let m = model::read(&path)?;
            let d = dataset::read(&data)?;
            let top1 = trainer::evaluate(&m, &d)?;
            let teacher = teacher_cache.map(|p| cache::read(&p)).transpose()?;
            let objective = match (&teacher, parse_rule_choice(&rule)?) {
                (Some(_), Some(r)) => Objective::with_rule(r, alpha, beta),
                _ => Objective::cross_entropy_only(),
            };
            let report = trainer::evaluate_loss(&m, &objective, &d, teacher.as_deref())?;
            println!("samples {}", d.len());
            println!("top1 {top1}");
            println!("ce {}", report.ce_part);
            println!("kld {}", report.kld_part);
            println!("total {}", report.total);
        }
        Command::Analyze {
            teacher_cache,
            student_cache,
            output,
            t_norm,
        } => {
            let t = cache::read(&teacher_cache)?;
            let s = cache::read(&student_cache)?;
            let r = analysis::analyze(&t, &s, t_norm)?;
            write_atomic(&output.join("analysis_summary.csv"), &r.summary_csv)?;
            write_atomic(&output.join("analysis_matrix.csv"), &r.matrix_csv)?;
            println!("raw frobenius {}", r.raw_frobenius);
            println!("normalized frobenius {}", r.normalized_frobenius);
        }
        Command::GradCheck {
            instances,
            seed,
            inject_fault,
        } => {
            let rows = gradsuite::run_suite(instances, seed, inject_fault)?;
            println!("{:<16} {:>9} {:>14} result", "loss", "instances", "max_rel_error");
            for r in &rows {
                let verdict = if r.passed() { "PASS" } else { "FAIL" };
                println!("{:<16} {:>9} {:>14.3e} {verdict}", r.loss, r.instances, r.max_rel_error);
            }
            return Ok(rows.iter().all(|r| r.passed()));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
