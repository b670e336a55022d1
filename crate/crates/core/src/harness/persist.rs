use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Checkpoint, EpochRecord, HarnessError, RunConfig, RunStatus, StepRecord, TrainingRun};
use crate::tasks::MetricKind;

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunSummary {
    name: String,
    config: RunConfig,
    status: RunStatus,
    metric: MetricKind,
    initial_loss: f64,
    total_steps: usize,
    best_epoch: Option<u32>,
    best_val_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    epoch: u32,
    file: String,
}

/// A run read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredRun {
    pub name: String,
    pub config: RunConfig,
    pub status: RunStatus,
    pub metric_kind: MetricKind,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub checkpoints: Vec<Checkpoint>,
}

fn create_dir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

fn read_file(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

fn checkpoint_file(epoch: u32) -> String {
    format!("epoch_{epoch:05}.txt")
}

/// Writes `steps.csv`, `epochs.csv`, `run.json` and `checkpoints/` into `dir`.
pub fn save_run(run: &TrainingRun, dir: &Path) -> Result<PathBuf, HarnessError> {
    create_dir(dir)?;
    write_csv(&dir.join("steps.csv"), &run.steps)?;
    write_csv(&dir.join("epochs.csv"), &run.epochs)?;

    let best = run.best();
    let summary = RunSummary {
        name: run.name.clone(),
        config: run.config.clone(),
        status: run.status.clone(),
        metric: run.metric_kind,
        initial_loss: run.initial_loss,
        total_steps: run.steps.len(),
        best_epoch: best.map(|b| b.0),
        best_val_metric: best.map(|b| b.1),
    };
    write_file(&dir.join("run.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;

    let cp_dir = dir.join("checkpoints");
    create_dir(&cp_dir)?;
    let mut manifest = Vec::with_capacity(run.checkpoints.len());
    for cp in &run.checkpoints {
        let file = checkpoint_file(cp.epoch);
        let mut text = String::with_capacity(cp.params.len() * 24);
        for p in &cp.params {
            text.push_str(&p.to_string());
            text.push('\n');
        }
        write_file(&cp_dir.join(&file), text.as_bytes())?;
        manifest.push(ManifestEntry { epoch: cp.epoch, file });
    }
    write_file(&cp_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(dir.to_path_buf())
}

pub fn load_run(dir: &Path) -> Result<StoredRun, HarnessError> {
    let bad = |reason: String| HarnessError::BadRunDir { path: dir.display().to_string(), reason };
    let summary: RunSummary = serde_json::from_str(&read_file(&dir.join("run.json"))?)?;
    let steps: Vec<StepRecord> = read_csv(&dir.join("steps.csv"))?;
    let epochs: Vec<EpochRecord> = read_csv(&dir.join("epochs.csv"))?;
    let cp_dir = dir.join("checkpoints");
    let manifest: Vec<ManifestEntry> = serde_json::from_str(&read_file(&cp_dir.join("manifest.json"))?)?;
    let mut checkpoints = Vec::with_capacity(manifest.len());
    for entry in manifest {
        let text = read_file(&cp_dir.join(&entry.file))?;
        let params = text
            .lines()
            .map(|l| l.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("{}: {e}", entry.file)))?;
        checkpoints.push(Checkpoint { epoch: entry.epoch, params });
    }
    if summary.total_steps != steps.len() {
        return Err(bad(format!("run.json lists {} steps, steps.csv has {}", summary.total_steps, steps.len())));
    }
    Ok(StoredRun {
        name: summary.name,
        config: summary.config,
        status: summary.status,
        metric_kind: summary.metric,
        steps,
        epochs,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{train, RunSettings, ScheduleSpec};
    use crate::optimizers::OptimizerSpec;
    use crate::tasks::TaskSpec;

    fn config() -> RunConfig {
        RunConfig {
            task: TaskSpec::Logistic { n_samples: 100, n_features: 3, class_separation: 3.0, seed: None },
            optimizer: OptimizerSpec::sgd(),
            schedule: ScheduleSpec::Clr {
                base_lr: 0.001,
                max_lr: 0.3,
                step_size: Some(7),
                step_size_epochs: None,
                shrink: Some(0.7),
            },
            run: RunSettings {
                batch_size: 8,
                epochs: 4,
                iters_per_epoch: 5,
                seed: 3,
                checkpoint_every: 1,
                output_dir: "runs".into(),
            },
        }
    }

    #[test]
    fn run_roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let run = train(&config()).unwrap();
        save_run(&run, dir.path()).unwrap();
        let back = load_run(dir.path()).unwrap();
        assert_eq!(back.steps, run.steps);
        assert_eq!(back.epochs, run.epochs);
        assert_eq!(back.checkpoints, run.checkpoints);
        assert_eq!(back.config, run.config);
        assert_eq!(back.status, run.status);
    }

    #[test]
    fn rerun_produces_identical_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        save_run(&train(&config()).unwrap(), a.path()).unwrap();
        save_run(&train(&config()).unwrap(), b.path()).unwrap();
        for f in ["steps.csv", "epochs.csv", "run.json", "checkpoints/manifest.json", "checkpoints/epoch_00004.txt"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }
}
