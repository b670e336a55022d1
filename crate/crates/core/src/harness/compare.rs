use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::persist::write_csv;
use super::{save_run, train, HarnessError, RunConfig, RunStatus, ScheduleSpec, TrainingRun};
use crate::optimizers::OptimizerSpec;
use crate::tasks::MetricKind;

const DEFAULT_BASE_DIVISOR: f64 = 50.0;
const DEFAULT_STEP_EPOCHS: f64 = 4.5;
const DEFAULT_GAMMA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Cyclical { shrink: bool },
    Inv,
    Constant,
}

/// A parsed run-name token such as `adam_cyc_yshrink_5e-4`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyToken {
    pub optimizer: String,
    pub kind: PolicyKind,
    pub lr: f64,
}

pub fn parse_policy_token(token: &str) -> Result<PolicyToken, HarnessError> {
    let bad = |why: &str| HarnessError::Config(format!("bad policy token {token:?}: {why}"));
    let parts: Vec<&str> = token.trim().split('_').collect();
    let (optimizer, kind, lr) = match parts.as_slice() {
        [opt, "cyc", shrink, lr] => {
            let shrink = match *shrink {
                "yshrink" => true,
                "nshrink" => false,
                _ => return Err(bad("shrink must be yshrink or nshrink")),
            };
            (opt, PolicyKind::Cyclical { shrink }, lr)
        }
        [opt, "inv", lr] => (opt, PolicyKind::Inv, lr),
        [opt, "const", lr] => (opt, PolicyKind::Constant, lr),
        _ => return Err(bad("expected <opt>_cyc_<y|n>shrink_<lr>, <opt>_inv_<lr> or <opt>_const_<lr>")),
    };
    if !matches!(*optimizer, "sgd" | "adam") {
        return Err(bad("optimizer must be sgd or adam"));
    }
    let lr: f64 = lr.parse().map_err(|_| bad("learning rate is not a number"))?;
    if !(lr.is_finite() && lr > 0.0) {
        return Err(bad("learning rate must be positive"));
    }
    Ok(PolicyToken { optimizer: optimizer.to_string(), kind, lr })
}

impl PolicyToken {
    /// `base` with this token's optimizer and schedule. Hyperparameters not
    /// named by the token come from `base` when it has a compatible section.
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        if base.optimizer.short_name() != self.optimizer {
            cfg.optimizer = if self.optimizer == "adam" { OptimizerSpec::adam() } else { OptimizerSpec::sgd() };
        }
        cfg.schedule = match self.kind {
            PolicyKind::Cyclical { shrink } => {
                let (mut base_lr, mut step_size, mut step_size_epochs, mut gamma) =
                    (self.lr / DEFAULT_BASE_DIVISOR, None, Some(DEFAULT_STEP_EPOCHS), DEFAULT_GAMMA);
                if let ScheduleSpec::Clr { base_lr: b, step_size: s, step_size_epochs: se, shrink: g, .. } = base.schedule {
                    if b < self.lr {
                        base_lr = b;
                    }
                    step_size = s;
                    step_size_epochs = se;
                    if let Some(g) = g.filter(|&g| g < 1.0) {
                        gamma = g;
                    }
                }
                ScheduleSpec::Clr {
                    base_lr,
                    max_lr: self.lr,
                    step_size,
                    step_size_epochs,
                    shrink: shrink.then_some(gamma),
                }
            }
            PolicyKind::Inv => {
                let warmup_steps = match base.schedule {
                    ScheduleSpec::Inv { warmup_steps, .. } => warmup_steps,
                    _ => base.run.iters_per_epoch,
                };
                ScheduleSpec::Inv { peak_lr: self.lr, warmup_steps }
            }
            PolicyKind::Constant => ScheduleSpec::Constant { lr: self.lr },
        };
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub rank: usize,
    pub name: String,
    pub best_epoch: Option<u32>,
    pub best_val_metric: Option<f64>,
    pub final_val_metric: Option<f64>,
    pub diverged: bool,
    pub diverged_step: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub metric_kind: MetricKind,
    /// Best run first.
    pub rows: Vec<ComparisonRow>,
    /// Runs in the order they were given.
    pub runs: Vec<TrainingRun>,
}

impl ComparisonReport {
    /// Writes `compare.csv` plus one run directory per policy under `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        for run in &self.runs {
            save_run(run, &dir.join(&run.name))?;
        }
        write_csv(&dir.join("compare.csv"), &self.rows)
    }
}

fn check_comparable(configs: &[RunConfig]) -> Result<(), HarnessError> {
    let first = &configs[0];
    for (i, c) in configs.iter().enumerate().skip(1) {
        let mismatch = if c.task != first.task {
            Some("task")
        } else if c.run.seed != first.run.seed {
            Some("seed")
        } else if c.run.batch_size != first.run.batch_size {
            Some("batch_size")
        } else if c.run.epochs != first.run.epochs {
            Some("epochs")
        } else if c.run.iters_per_epoch != first.run.iters_per_epoch {
            Some("iters_per_epoch")
        } else {
            None
        };
        if let Some(field) = mismatch {
            return Err(HarnessError::Config(format!(
                "config {i} differs from config 0 in {field}; only optimizer and schedule may vary"
            )));
        }
    }
    Ok(())
}

/// Trains every config in parallel and ranks them by best validation metric.
/// Diverged runs rank after completed ones.
pub fn compare_policies(configs: &[RunConfig]) -> Result<ComparisonReport, HarnessError> {
    if configs.len() < 2 {
        return Err(HarnessError::Config("a comparison needs at least two policies".into()));
    }
    check_comparable(configs)?;
    for c in configs {
        c.validate()?;
    }
    let mut runs = configs.par_iter().map(train).collect::<Result<Vec<_>, _>>()?;

    let mut seen = std::collections::HashMap::<String, usize>::new();
    for run in &mut runs {
        let n = seen.entry(run.name.clone()).or_insert(0);
        *n += 1;
        if *n > 1 {
            run.name = format!("{}-{n}", run.name);
        }
    }

    let metric_kind = runs[0].metric_kind;
    let mut rows: Vec<ComparisonRow> = runs
        .iter()
        .map(|run| {
            let best = run.best();
            ComparisonRow {
                rank: 0,
                name: run.name.clone(),
                best_epoch: best.map(|b| b.0),
                best_val_metric: best.map(|b| b.1),
                final_val_metric: run.epochs.last().map(|e| e.val_metric),
                diverged: run.status.is_diverged(),
                diverged_step: match run.status {
                    RunStatus::Diverged { step } => Some(step),
                    _ => None,
                },
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        a.diverged.cmp(&b.diverged).then_with(|| match (a.best_val_metric, b.best_val_metric) {
            (Some(x), Some(y)) if metric_kind.better(x, y) => Ordering::Less,
            (Some(x), Some(y)) if metric_kind.better(y, x) => Ordering::Greater,
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            _ => Ordering::Equal,
        })
    });
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    Ok(ComparisonReport { metric_kind, rows, runs })
}
