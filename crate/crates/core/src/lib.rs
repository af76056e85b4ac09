//! Controllable Pareto trade-offs between classification accuracy and group
//! fairness.
//!
//! A small two-layer classifier is trained with a multi-objective update: per
//! objective gradients are smoothed with exponential moving averages, pruned to
//! the high-magnitude parameters, and combined through the minimum-norm point of
//! their convex hull. A KL constraint between the loss vector and a user
//! reference vector steers which region of the Pareto front is reached.
//!
//! Modules, bottom-up:
//!
//! - [`paramspace`]: the classifier, its flat parameter vector and exact gradients.
//! - [`objectives`]: cross-entropy, the differentiable equalized-odds gap and the
//!   KL reference constraint.
//! - [`moosolver`]: min-norm simplex weights (Frank-Wolfe / closed form).
//! - [`cpt`]: the two-stage training loop and the baselines.
//! - [`metrics`]: accuracy, EODD, non-dominated filtering and 2-D hypervolume.
//! - [`data`]: synthetic grouped data, CSV ingestion, splitting and batching.
//! - [`cli`]: the `cpt` command line surface and the sweep harness.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod cpt;
pub mod data;
mod error;
pub mod metrics;
pub mod moosolver;
pub mod objectives;
pub mod paramspace;

pub use error::{Error, Result};
