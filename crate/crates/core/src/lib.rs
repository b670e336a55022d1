//! Learning-rate policy laboratory.
//!
//! Triangular cyclical learning rates with optional per-cycle shrink, the
//! range test that picks their bounds, an inverse square root warmup
//! baseline, momentum SGD and Adam, seeded synthetic tasks with hand-coded
//! gradients, trajectory PCA, and a harness that runs, compares, sweeps and
//! replays experiments.

pub mod harness;
pub mod landscape;
mod linalg;
pub mod optimizers;
pub mod rng;
pub mod schedules;
pub mod tasks;

pub use harness::{
    batch_sweep, compare_policies, landscape_from_run, load_run, save_run, train, verify_run, HarnessError, RunConfig,
    RunStatus, ScheduleSpec, TrainingRun,
};
pub use landscape::{build_trajectory_matrix, loss_surface_grid, pca_project, PcaProjection, SurfaceGrid, TrajectoryMatrix};
pub use optimizers::{adam_step, sgd_step, AdamState, Optimizer, OptimizerSpec, SgdState};
pub use range_test::{run_range_test, select_lr_bounds, AnalyzerTolerances, LrBounds, RangeTestConfig, RangeTestCurve};
pub use schedules::{validate_step_size, ClrPolicy, ConstantPolicy, InvPolicy, Schedule, Shrink};
pub use tasks::{Batch, Task, TaskSpec};
