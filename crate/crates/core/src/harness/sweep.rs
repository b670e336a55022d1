use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::persist::write_csv;
use super::{save_run, train, HarnessError, RunConfig, TrainingRun};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepEntry {
    pub batch_size: usize,
    #[serde(skip)]
    pub final_val: Option<f64>,
    pub best_val: Option<f64>,
    pub best_epoch: Option<u32>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// In the order the batch sizes were given.
    pub entries: Vec<SweepEntry>,
    pub runs: Vec<TrainingRun>,
}

impl SweepReport {
    /// Writes `sweep.csv` and one `bs<k>` run directory per batch size.
    pub fn save(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        for (entry, run) in self.entries.iter().zip(&self.runs) {
            save_run(run, &dir.join(format!("bs{}", entry.batch_size)))?;
        }
        write_csv(&dir.join("sweep.csv"), &self.entries)
    }
}

/// Trains `base` once per batch size, everything else held fixed. Each run
/// starts from the same initialization and has its own optimizer state.
pub fn batch_sweep(base: &RunConfig, batch_sizes: &[usize]) -> Result<SweepReport, HarnessError> {
    if batch_sizes.is_empty() {
        return Err(HarnessError::Config("batch sweep needs at least one batch size".into()));
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = batch_sizes.iter().find(|b| !seen.insert(**b)) {
        return Err(HarnessError::Config(format!("batch size {dup} is listed twice")));
    }
    let configs: Vec<RunConfig> = batch_sizes
        .iter()
        .map(|&b| {
            let mut c = base.clone();
            c.run.batch_size = b;
            c
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let runs = configs.par_iter().map(train).collect::<Result<Vec<_>, _>>()?;
    let entries = runs
        .iter()
        .map(|run| {
            let best = run.best_val_loss();
            SweepEntry {
                batch_size: run.config.run.batch_size,
                final_val: run.epochs.last().map(|e| e.val_loss),
                best_val: best.map(|b| b.1),
                best_epoch: best.map(|b| b.0),
                diverged: run.status.is_diverged(),
            }
        })
        .collect();
    Ok(SweepReport { entries, runs })
}
