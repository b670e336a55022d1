//! Experiment harness: configs, training runs, policy comparison, batch
//! sweeps, persistence, replay verification and landscape export.

mod compare;
mod config;
mod persist;
mod replay;
mod sweep;
mod train;

use thiserror::Error;

use crate::landscape::LandscapeError;
use crate::optimizers::OptimError;
use crate::range_test::RangeTestError;
use crate::tasks::TaskError;

pub use compare::{compare_policies, parse_policy_token, ComparisonReport, ComparisonRow, PolicyToken};
pub use config::{format_lr, RunConfig, RunSettings, ScheduleSpec};
pub use persist::{load_run, save_run, StoredRun};
pub use replay::{landscape_from_run, verify_run, LandscapeReport, VerifyReport};
pub use sweep::{batch_sweep, SweepEntry, SweepReport};
pub use train::{train, Checkpoint, EpochRecord, RunStatus, StepRecord, TrainingRun};

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Rejected before any computation.
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    RangeTest(#[from] RangeTestError),
    #[error(transparent)]
    Landscape(#[from] LandscapeError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("malformed run directory {path}: {reason}")]
    BadRunDir { path: String, reason: String },
}

impl HarnessError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), source }
    }
}
