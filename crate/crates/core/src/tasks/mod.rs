//! Seeded differentiable objectives with hand-coded gradients.
//!
//! Every task exposes the same [`Task`] interface: a flat parameter vector,
//! minibatch loss and gradient, and a held-out evaluation. Datasets are
//! regenerated from their seed at construction; nothing is persisted.

mod attention;
pub mod gradcheck;
mod logistic;
mod plateau;
mod quadratic;

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{rng_for, Stream};

pub use attention::TinyAttentionTask;
pub use logistic::LogisticTask;
pub use plateau::PlateauTask;
pub use quadratic::{gd_stability_threshold, QuadraticTask};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("parameter vector has dimension {got}, task expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite parameter at index {index}")]
    NonFiniteParams { index: usize },
    #[error("invalid task configuration: {0}")]
    InvalidConfig(String),
}

/// Which examples a loss or gradient is computed over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Batch {
    /// The whole training split (or the exact objective for dataset-free tasks).
    Full,
    /// Indices into the full sample set; always drawn from the training split.
    Indices(Vec<usize>),
}

/// How a task's validation metric should be ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Accuracy,
    Loss,
}

impl MetricKind {
    pub fn higher_is_better(self) -> bool {
        matches!(self, MetricKind::Accuracy)
    }

    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        if self.higher_is_better() {
            a > b
        } else {
            a < b
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub metric: f64,
}

pub trait Task: Send + Sync {
    fn name(&self) -> &'static str;

    fn param_dim(&self) -> usize;

    /// Deterministic initial parameters for `seed`.
    fn init_params(&self, seed: u64) -> Vec<f64>;

    /// Number of training examples, or `None` for dataset-free objectives.
    fn train_size(&self) -> Option<usize>;

    fn sample_batch(&self, seed: u64, batch_size: usize) -> Batch;

    fn loss(&self, params: &[f64], batch: &Batch) -> Result<f64, TaskError>;

    fn loss_and_grad(&self, params: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>), TaskError>;

    fn grad(&self, params: &[f64], batch: &Batch) -> Result<Vec<f64>, TaskError> {
        self.loss_and_grad(params, batch).map(|(_, g)| g)
    }

    /// Loss and metric on the held-out split (or the exact objective).
    fn evaluate(&self, params: &[f64]) -> Result<Evaluation, TaskError>;

    fn metric_kind(&self) -> MetricKind;

    /// Known analytic constants of the objective.
    fn metadata(&self) -> BTreeMap<&'static str, f64>;
}

pub(crate) fn check_params(params: &[f64], expected: usize) -> Result<(), TaskError> {
    if params.len() != expected {
        return Err(TaskError::DimensionMismatch { expected, got: params.len() });
    }
    if let Some(index) = params.iter().position(|p| !p.is_finite()) {
        return Err(TaskError::NonFiniteParams { index });
    }
    Ok(())
}

/// Seeded 80/20 train/validation partition of `n` samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl Split {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, Stream::Split, 0);
        let order = index::sample(&mut rng, n, n).into_vec();
        let n_val = ((n as f64) * 0.2).round().max(1.0) as usize;
        let val = order[..n_val].to_vec();
        let train = order[n_val..].to_vec();
        Self { train, val }
    }

    pub fn sample(&self, seed: u64, batch_size: usize) -> Batch {
        let mut rng = rng_for(seed, Stream::Batch, 0);
        let amount = batch_size.min(self.train.len());
        let picks = index::sample(&mut rng, self.train.len(), amount);
        Batch::Indices(picks.into_iter().map(|i| self.train[i]).collect())
    }

    pub fn resolve<'a>(&'a self, batch: &'a Batch) -> &'a [usize] {
        match batch {
            Batch::Full => &self.train,
            Batch::Indices(ix) => ix,
        }
    }
}

/// Task selection and parameters, as written in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TaskSpec {
    Quadratic {
        spectrum: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        init: Option<Vec<f64>>,
    },
    Plateau {
        #[serde(default = "defaults::plateau_gradient")]
        plateau_gradient: f64,
        #[serde(default = "defaults::plateau_length")]
        plateau_length: f64,
        #[serde(default = "defaults::basin_curvature")]
        basin_curvature: f64,
        #[serde(default)]
        extra_dims: usize,
    },
    Logistic {
        #[serde(default = "defaults::n_samples")]
        n_samples: usize,
        #[serde(default = "defaults::n_features")]
        n_features: usize,
        #[serde(default = "defaults::class_separation")]
        class_separation: f64,
        /// Dataset seed; the run seed is used when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Attention {
        #[serde(default = "defaults::vocab_size")]
        vocab_size: usize,
        #[serde(default = "defaults::seq_len")]
        seq_len: usize,
        #[serde(default = "defaults::d_model")]
        d_model: usize,
        #[serde(default = "defaults::attention_samples")]
        n_samples: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

mod defaults {
    pub fn plateau_gradient() -> f64 {
        0.1
    }
    pub fn plateau_length() -> f64 {
        10.0
    }
    pub fn basin_curvature() -> f64 {
        1.0
    }
    pub fn n_samples() -> usize {
        1000
    }
    pub fn n_features() -> usize {
        10
    }
    pub fn class_separation() -> f64 {
        4.0
    }
    pub fn vocab_size() -> usize {
        6
    }
    pub fn seq_len() -> usize {
        8
    }
    pub fn d_model() -> usize {
        8
    }
    pub fn attention_samples() -> usize {
        1000
    }
}

impl TaskSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            TaskSpec::Quadratic { .. } => "quadratic",
            TaskSpec::Plateau { .. } => "plateau",
            TaskSpec::Logistic { .. } => "logistic",
            TaskSpec::Attention { .. } => "attention",
        }
    }

    /// Constructs the task; dataset tasks without their own seed use `run_seed`.
    pub fn build(&self, run_seed: u64) -> Result<Box<dyn Task>, TaskError> {
        Ok(match self {
            TaskSpec::Quadratic { spectrum, init } => {
                let task = QuadraticTask::new(spectrum.clone())?;
                match init {
                    Some(init) => Box::new(task.with_init(init.clone())?),
                    None => Box::new(task),
                }
            }
            TaskSpec::Plateau { plateau_gradient, plateau_length, basin_curvature, extra_dims } => {
                Box::new(PlateauTask::new(*plateau_gradient, *plateau_length, *basin_curvature, *extra_dims)?)
            }
            TaskSpec::Logistic { n_samples, n_features, class_separation, seed } => Box::new(LogisticTask::new(
                *n_samples,
                *n_features,
                *class_separation,
                seed.unwrap_or(run_seed),
            )?),
            TaskSpec::Attention { vocab_size, seq_len, d_model, n_samples, seed } => Box::new(
                TinyAttentionTask::new(*vocab_size, *seq_len, *d_model, *n_samples, seed.unwrap_or(run_seed))?,
            ),
        })
    }
}
