//! Differentially private subspace fine-tuning.
//!
//! A short training run records parameter displacements, a thin SVD of that trajectory
//! gives an orthonormal basis `P` (`d x k`), and private training then clips and noises
//! per-example gradients in the `k`-dimensional coordinates `Pᵀg` before mapping the
//! update back with `P`. Full-space DP-SGD and non-private training are provided as
//! baselines, together with a Rényi-DP accountant and noise calibration.
// Negated comparisons are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod engine;
pub mod io;
pub mod linalg;
pub mod mechanism;
pub mod models;
pub mod privacy;
pub mod rng;
pub mod subspace;

pub use engine::{RunConfig, RunReport};
pub use linalg::{DenseMatrix, SvdResult};
pub use models::{Example, ModelSpec, ParameterVector};
pub use privacy::{BudgetSplit, NoiseScaleMode, PrivacySpec};
pub use subspace::{ProjectionMatrix, TrajectoryRecorder};
