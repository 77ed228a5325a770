//! Logit-based knowledge distillation with fixed, multi-set and per-sample
//! normalized temperatures, plus a small MLP teacher/student harness.
//!
//! Layering, bottom to top: [`numcore`] (matrices and reverse-mode
//! differentiation), [`logitstats`] (per-sample statistics and temperature
//! rules), [`distill`] (the losses), [`trainer`] (MLP training) and
//! [`harness`] (files, experiments and analysis used by the CLI).

pub mod distill;
pub mod error;
pub mod harness;
pub mod logitstats;
pub mod numcore;
pub mod trainer;

pub use distill::{LossReport, Objective, SoftDistribution};
pub use error::{Error, Result};
pub use logitstats::{LogitRecord, LogitSummary, StdKind, TemperatureRule, Temperatures};
pub use numcore::{Matrix, Tape, Var};

pub use trainer::{Dataset, Mlp, MlpSpec, TrainConfig, TrainHistory};
