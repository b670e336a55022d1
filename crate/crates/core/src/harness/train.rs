use serde::{Deserialize, Serialize};

use super::{HarnessError, RunConfig};
use crate::rng::{derive_seed, Stream};
use crate::schedules::Schedule;
use crate::tasks::{Batch, MetricKind, Task, TaskError};

/// A run is declared diverged once a batch loss exceeds this multiple of the
/// initial full training loss.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u32,
    pub lr: f64,
    /// Mini-batch loss before the update.
    pub train_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub val_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: u32,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    /// `step` is the first step whose loss was non-finite or exploded.
    Diverged { step: u64 },
    /// Stopped by an unexpected task or optimizer failure.
    Error { message: String },
}

impl RunStatus {
    pub fn is_diverged(&self) -> bool {
        matches!(self, RunStatus::Diverged { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub name: String,
    pub config: RunConfig,
    pub metric_kind: MetricKind,
    pub initial_loss: f64,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub checkpoints: Vec<Checkpoint>,
    pub status: RunStatus,
}

impl TrainingRun {
    /// Best validation metric and its epoch; ties keep the earliest epoch.
    pub fn best(&self) -> Option<(u32, f64)> {
        let kind = self.metric_kind;
        self.epochs
            .iter()
            .filter(|e| e.val_metric.is_finite())
            .fold(None, |best: Option<(u32, f64)>, e| match best {
                Some((_, b)) if !kind.better(e.val_metric, b) => best,
                _ => Some((e.epoch, e.val_metric)),
            })
    }

    /// Lowest validation loss and its epoch.
    pub fn best_val_loss(&self) -> Option<(u32, f64)> {
        self.epochs
            .iter()
            .filter(|e| e.val_loss.is_finite())
            .fold(None, |best: Option<(u32, f64)>, e| match best {
                Some((_, b)) if e.val_loss >= b => best,
                _ => Some((e.epoch, e.val_loss)),
            })
    }

    pub fn final_params(&self) -> Option<&[f64]> {
        self.checkpoints.last().map(|c| c.params.as_slice())
    }
}

/// Trains one run in memory. Nothing is written to disk.
pub fn train(config: &RunConfig) -> Result<TrainingRun, HarnessError> {
    let schedule = config.validate()?;
    let task = config.task.build(config.run.seed)?;
    train_task(config, task.as_ref(), &schedule)
}

pub(crate) fn train_task(config: &RunConfig, task: &dyn Task, schedule: &Schedule) -> Result<TrainingRun, HarnessError> {
    let r = &config.run;
    let mut params = task.init_params(r.seed);
    let mut opt = config.optimizer.build(task.param_dim())?;
    let initial_loss = task.loss(&params, &Batch::Full)?;
    if !initial_loss.is_finite() {
        return Err(HarnessError::Config(format!("initial loss is {initial_loss}")));
    }
    let limit = DIVERGENCE_FACTOR * initial_loss.abs().max(f64::MIN_POSITIVE);

    let mut run = TrainingRun {
        name: config.run_name(),
        config: config.clone(),
        metric_kind: task.metric_kind(),
        initial_loss,
        steps: Vec::with_capacity(config.total_steps() as usize),
        epochs: Vec::with_capacity(r.epochs as usize),
        checkpoints: vec![Checkpoint { epoch: 0, params: params.clone() }],
        status: RunStatus::Completed,
    };

    let mut step = 0u64;
    'epochs: for epoch in 1..=r.epochs {
        for _ in 0..r.iters_per_epoch {
            let lr = schedule.lr_at(step);
            let batch = task.sample_batch(derive_seed(r.seed, Stream::Batch, step), r.batch_size);
            let outcome = task.loss_and_grad(&params, &batch);
            let (loss, grad) = match outcome {
                Ok(v) => v,
                Err(TaskError::NonFiniteParams { .. }) => (f64::NAN, Vec::new()),
                Err(e) => {
                    run.status = RunStatus::Error { message: e.to_string() };
                    break 'epochs;
                }
            };
            run.steps.push(StepRecord { step, epoch, lr, train_loss: loss });
            if !loss.is_finite() || loss > limit {
                log::warn!("{}: diverged at step {step} (loss {loss})", run.name);
                run.status = RunStatus::Diverged { step };
                break 'epochs;
            }
            if let Err(e) = opt.step(&mut params, &grad, lr) {
                if e.is_divergence() {
                    run.status = RunStatus::Diverged { step };
                } else {
                    run.status = RunStatus::Error { message: e.to_string() };
                }
                break 'epochs;
            }
            step += 1;
        }

        let eval = match task.evaluate(&params) {
            Ok(e) if e.loss.is_finite() => e,
            Ok(_) | Err(TaskError::NonFiniteParams { .. }) => {
                run.status = RunStatus::Diverged { step: step - 1 };
                break;
            }
            Err(e) => {
                run.status = RunStatus::Error { message: e.to_string() };
                break;
            }
        };
        run.epochs.push(EpochRecord {
            epoch,
            val_loss: eval.loss,
            val_metric: eval.metric,
        });
        if epoch % r.checkpoint_every == 0 || epoch == r.epochs {
            run.checkpoints.push(Checkpoint { epoch, params: params.clone() });
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{RunSettings, ScheduleSpec};
    use crate::optimizers::OptimizerSpec;
    use crate::tasks::TaskSpec;

    fn quadratic(lr: f64, epochs: u32, ipe: u64) -> RunConfig {
        RunConfig {
            task: TaskSpec::Quadratic { spectrum: vec![1.0], init: None },
            optimizer: OptimizerSpec::Sgd { momentum: 0.0 },
            schedule: ScheduleSpec::Constant { lr },
            run: RunSettings {
                batch_size: 1,
                epochs,
                iters_per_epoch: ipe,
                seed: 0,
                checkpoint_every: 2,
                output_dir: "runs".into(),
            },
        }
    }

    #[test]
    fn gd_on_unit_quadratic_quarters_the_loss() {
        let run = train(&quadratic(0.5, 3, 4)).unwrap();
        assert_eq!(run.status, RunStatus::Completed);
        assert_eq!(run.steps.len(), 12);
        for w in run.steps.windows(2) {
            assert_eq!(w[1].train_loss / w[0].train_loss, 0.25);
        }
    }

    #[test]
    fn large_lr_diverges_with_step_index() {
        let run = train(&quadratic(10.0, 20, 10)).unwrap();
        let RunStatus::Diverged { step } = run.status else { panic!("should diverge") };
        assert!(step < 200);
        assert_eq!(run.steps.last().unwrap().step, step);
    }

    #[test]
    fn checkpoints_include_init_interval_and_final() {
        let run = train(&quadratic(0.1, 5, 3)).unwrap();
        let epochs: Vec<u32> = run.checkpoints.iter().map(|c| c.epoch).collect();
        assert_eq!(epochs, vec![0, 2, 4, 5]);
    }

    #[test]
    fn recorded_lr_matches_schedule() {
        let mut cfg = quadratic(0.1, 4, 25);
        cfg.schedule = ScheduleSpec::Clr {
            base_lr: 0.01,
            max_lr: 0.5,
            step_size: Some(30),
            step_size_epochs: None,
            shrink: Some(0.5),
        };
        let schedule = cfg.validate().unwrap();
        let run = train(&cfg).unwrap();
        for s in &run.steps {
            assert_eq!(s.lr.to_bits(), schedule.lr_at(s.step).to_bits());
        }
    }

    #[test]
    fn identical_configs_train_identically() {
        let cfg = RunConfig {
            task: TaskSpec::Logistic { n_samples: 200, n_features: 3, class_separation: 4.0, seed: None },
            optimizer: OptimizerSpec::adam(),
            schedule: ScheduleSpec::Inv { peak_lr: 0.05, warmup_steps: 10 },
            run: RunSettings {
                batch_size: 16,
                epochs: 3,
                iters_per_epoch: 10,
                seed: 5,
                checkpoint_every: 1,
                output_dir: "runs".into(),
            },
        };
        assert_eq!(train(&cfg).unwrap(), train(&cfg).unwrap());
    }
}
