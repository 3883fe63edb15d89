//! Tabular laboratory for multi-step off-policy evaluation and improvement.
//!
//! The crate is organized bottom-up:
//!
//! - [`mdp`]: finite MDPs, policies, exact evaluation and optimal control.
//! - [`operators`]: V-trace style evaluation operators in matrix form and
//!   their contraction rates.
//! - [`gradients`]: analytic gradients of values and operator outputs with
//!   respect to softmax logits.
//! - [`sampling`]: trajectory simulation and per-trajectory estimators.
//! - [`algorithms`]: value-iteration style recursions and actor-critic loops.
//! - [`experiments`]: configuration, seeding, CSV output and audits.

// `!(x > 0.0)` rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops read closer to the matrix formulas.
#![allow(clippy::needless_range_loop)]

pub mod algorithms;
pub mod error;
pub mod experiments;
pub mod gradients;
pub mod io;
mod linalg;
pub mod mdp;
pub mod operators;
pub mod sampling;
pub mod seeding;

pub use error::{LabError, Result};
pub use mdp::{Mdp, QFunction, SoftmaxPolicy, TabularPolicy, ValueFunction};
pub use operators::{TraceKind, TraceSpec};
