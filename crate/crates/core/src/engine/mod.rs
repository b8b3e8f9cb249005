//! Training workflows: the full-space baselines, the two subspace stages, and the
//! experiments composed from them.

mod config;
mod report;
mod train;
mod workflows;

use thiserror::Error;

pub use config::{DataPaths, PrivacySettings, RunConfig, Sampling, SubspaceSettings, TrainSettings};
pub use report::{EvalRecord, RunReport, StageSummary, StepRecord};
pub use train::{run_loop, sample_batch, Accounting, LoopOutcome, LoopSpec, NoiseSpec};
pub use workflows::{
    dpsgd_train, initial_params, nondp_train, pipeline, run_noisy_trajectory_ablation, run_transfer, stage1_train,
    stage2_train, write_run_outputs, Stage1Output, TaskData, TrainOutput,
};

use crate::io::IoError;
use crate::mechanism::MechanismError;
use crate::models::ModelError;
use crate::privacy::PrivacyError;
use crate::subspace::SubspaceError;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("data: {0}")]
    Data(String),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Io(#[from] IoError),
}
