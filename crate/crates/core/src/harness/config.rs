use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::optimizers::OptimizerSpec;
use crate::schedules::{validate_step_size, ClrPolicy, ConstantPolicy, InvPolicy, Schedule, Shrink};
use crate::tasks::TaskSpec;

/// Learning-rate policy as written in the `[schedule]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScheduleSpec {
    Clr {
        base_lr: f64,
        max_lr: f64,
        /// Half-cycle length in iterations.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_size: Option<u64>,
        /// Half-cycle length in epochs; converted with `iters_per_epoch`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_size_epochs: Option<f64>,
        /// Per-cycle amplitude factor; absent means no shrink.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shrink: Option<f64>,
    },
    Inv {
        peak_lr: f64,
        warmup_steps: u64,
    },
    Constant {
        lr: f64,
    },
}

impl ScheduleSpec {
    pub fn resolve(&self, iters_per_epoch: u64) -> Result<Schedule, HarnessError> {
        let bad = |e: crate::schedules::ScheduleError| HarnessError::Config(e.to_string());
        Ok(match *self {
            ScheduleSpec::Clr { base_lr, max_lr, step_size, step_size_epochs, shrink } => {
                let step = match (step_size, step_size_epochs) {
                    (Some(s), None) => s,
                    (None, Some(e)) if e.is_finite() && e > 0.0 => (e * iters_per_epoch as f64).round() as u64,
                    (None, Some(e)) => {
                        return Err(HarnessError::Config(format!("step_size_epochs {e} must be positive")))
                    }
                    _ => {
                        return Err(HarnessError::Config(
                            "clr schedule needs exactly one of step_size or step_size_epochs".into(),
                        ))
                    }
                };
                let shrink = shrink.map_or(Shrink::None, Shrink::PerCycle);
                Schedule::Clr(ClrPolicy::new(base_lr, max_lr, step, shrink).map_err(bad)?)
            }
            ScheduleSpec::Inv { peak_lr, warmup_steps } => {
                Schedule::Inv(InvPolicy::new(peak_lr, warmup_steps).map_err(bad)?)
            }
            ScheduleSpec::Constant { lr } => Schedule::Constant(ConstantPolicy::new(lr).map_err(bad)?),
        })
    }

    /// Policy tag used in run names: `cyc`, `inv` or `const`.
    pub fn short_name(&self) -> &'static str {
        match self {
            ScheduleSpec::Clr { .. } => "cyc",
            ScheduleSpec::Inv { .. } => "inv",
            ScheduleSpec::Constant { .. } => "const",
        }
    }
}

fn default_checkpoint_every() -> u32 {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// The `[run]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub batch_size: usize,
    pub epochs: u32,
    pub iters_per_epoch: u64,
    pub seed: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u32,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub optimizer: OptimizerSpec,
    pub schedule: ScheduleSpec,
    pub run: RunSettings,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn total_steps(&self) -> u64 {
        u64::from(self.run.epochs) * self.run.iters_per_epoch
    }

    /// Checks every field and returns the resolved schedule. Runs no training.
    pub fn validate(&self) -> Result<Schedule, HarnessError> {
        let r = &self.run;
        if r.batch_size == 0 || r.epochs == 0 || r.iters_per_epoch == 0 || r.checkpoint_every == 0 {
            return Err(HarnessError::Config(
                "batch_size, epochs, iters_per_epoch and checkpoint_every must all be at least 1".into(),
            ));
        }
        if i64::try_from(r.seed).is_err() {
            return Err(HarnessError::Config(format!("seed {} does not fit in a signed 64-bit integer", r.seed)));
        }
        let schedule = self.schedule.resolve(r.iters_per_epoch)?;
        if let Schedule::Clr(p) = &schedule {
            validate_step_size(p.step_size(), r.iters_per_epoch);
        }
        let task = self.task.build(r.seed).map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(n) = task.train_size() {
            if r.batch_size > n {
                return Err(HarnessError::Config(format!(
                    "batch_size {} exceeds the {n} training examples",
                    r.batch_size
                )));
            }
        }
        self.optimizer.build(task.param_dim()).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(schedule)
    }

    /// `<opt>_<policy>[_<shrink>]_<lr>`, e.g. `adam_cyc_nshrink_5e-4` or `adam_inv_5e-4`.
    pub fn run_name(&self) -> String {
        let opt = self.optimizer.short_name();
        match &self.schedule {
            ScheduleSpec::Clr { max_lr, shrink, .. } => {
                let shrinking = shrink.is_some_and(|g| g < 1.0);
                let tag = if shrinking { "yshrink" } else { "nshrink" };
                format!("{opt}_cyc_{tag}_{}", format_lr(*max_lr))
            }
            ScheduleSpec::Inv { peak_lr, .. } => format!("{opt}_inv_{}", format_lr(*peak_lr)),
            ScheduleSpec::Constant { lr } => format!("{opt}_const_{}", format_lr(*lr)),
        }
    }
}

/// Compact learning-rate label: `5e-4`, `7.6e-4`, `6.9`, `30`.
pub fn format_lr(lr: f64) -> String {
    if lr >= 1.0 {
        format!("{lr}")
    } else {
        format!("{lr:e}")
    }
}
