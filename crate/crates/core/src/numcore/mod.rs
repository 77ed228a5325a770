//! Dense matrices and a small reverse-mode differentiation engine.
//!
//! Everything is `f64`. The tape is single-owner; matrices are plain values.

mod gradcheck;
pub mod kernels;
mod matrix;
mod tape;

pub use gradcheck::{central_differences, grad_check, max_relative_error, value_and_grad};
pub use kernels::StdKind;
pub use matrix::{argmax, Matrix};
pub use tape::{Gradients, Tape, Var};
