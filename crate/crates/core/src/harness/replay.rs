use std::path::Path;

use serde::Serialize;

use super::persist::write_csv;
use super::{load_run, HarnessError};
use crate::landscape::{build_trajectory_matrix, default_extent, loss_surface_grid, pca_project, PcaProjection, SurfaceGrid};
use crate::tasks::Batch;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub steps_checked: usize,
    /// Steps whose recorded learning rate differs from the schedule.
    pub mismatches: Vec<u64>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Recomputes the schedule from the stored config and compares every
/// recorded learning rate bit for bit.
pub fn verify_run(dir: &Path) -> Result<VerifyReport, HarnessError> {
    let stored = load_run(dir)?;
    let schedule = stored.config.schedule.resolve(stored.config.run.iters_per_epoch)?;
    let mismatches = stored
        .steps
        .iter()
        .filter(|s| s.lr.to_bits() != schedule.lr_at(s.step).to_bits())
        .map(|s| s.step)
        .collect();
    Ok(VerifyReport { steps_checked: stored.steps.len(), mismatches })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct TrajectoryRow {
    epoch: u32,
    pc1: f64,
    pc2: f64,
    lr_at_epoch: f64,
    loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct SurfaceRow {
    alpha: f64,
    beta: f64,
    loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct PcaMeta {
    explained_variance_1: f64,
    explained_variance_2: f64,
    degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeReport {
    pub projection: PcaProjection,
    /// Absent when the trajectory is degenerate.
    pub surface: Option<SurfaceGrid>,
}

/// Projects a stored run's checkpoints onto their top two principal
/// directions and evaluates the loss surface around the final checkpoint.
/// Writes `trajectory.csv`, `surface.csv` and `pca_meta.json` into `out`.
pub fn landscape_from_run(
    run_dir: &Path,
    out: &Path,
    extent: Option<f64>,
    resolution: usize,
) -> Result<LandscapeReport, HarnessError> {
    let stored = load_run(run_dir)?;
    let cfg = &stored.config;
    let schedule = cfg.schedule.resolve(cfg.run.iters_per_epoch)?;
    let task = cfg.task.build(cfg.run.seed)?;
    let params: Vec<Vec<f64>> = stored.checkpoints.iter().map(|c| c.params.clone()).collect();
    let matrix = build_trajectory_matrix(&params)?;
    let projection = pca_project(&matrix);

    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let rows = stored
        .checkpoints
        .iter()
        .zip(&projection.coords)
        .map(|(cp, c)| {
            let last_step = (u64::from(cp.epoch) * cfg.run.iters_per_epoch).saturating_sub(1);
            Ok(TrajectoryRow {
                epoch: cp.epoch,
                pc1: c[0],
                pc2: c[1],
                lr_at_epoch: schedule.lr_at(last_step),
                loss: task.loss(&cp.params, &Batch::Full)?,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    write_csv(&out.join("trajectory.csv"), &rows)?;

    let meta = PcaMeta {
        explained_variance_1: projection.explained_variance[0],
        explained_variance_2: projection.explained_variance[1],
        degenerate: projection.degenerate,
    };
    let meta_path = out.join("pca_meta.json");
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(|e| HarnessError::io(&meta_path, e))?;

    let surface = if projection.degenerate {
        log::warn!("trajectory has no spread; skipping the loss surface");
        let path = out.join("surface.csv");
        std::fs::write(&path, "alpha,beta,loss\n").map_err(|e| HarnessError::io(&path, e))?;
        None
    } else {
        let extent = extent.unwrap_or_else(|| default_extent(&projection));
        let [d1, d2] = &projection.directions;
        let grid = loss_surface_grid(task.as_ref(), matrix.center(), d1, d2, extent, resolution)?;
        let mut cells = Vec::with_capacity(resolution * resolution);
        for (i, &alpha) in grid.alphas.iter().enumerate() {
            for (j, &beta) in grid.betas.iter().enumerate() {
                cells.push(SurfaceRow { alpha, beta, loss: grid.losses[i][j] });
            }
        }
        write_csv(&out.join("surface.csv"), &cells)?;
        Some(grid)
    };
    Ok(LandscapeReport { projection, surface })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{save_run, train, RunConfig, RunSettings, ScheduleSpec};
    use crate::optimizers::OptimizerSpec;
    use crate::tasks::TaskSpec;

    fn config() -> RunConfig {
        RunConfig {
            task: TaskSpec::Quadratic { spectrum: vec![1.0, 0.3, 0.05], init: None },
            optimizer: OptimizerSpec::sgd(),
            schedule: ScheduleSpec::Clr {
                base_lr: 0.01,
                max_lr: 0.4,
                step_size: Some(15),
                step_size_epochs: None,
                shrink: None,
            },
            run: RunSettings {
                batch_size: 1,
                epochs: 6,
                iters_per_epoch: 10,
                seed: 0,
                checkpoint_every: 1,
                output_dir: "runs".into(),
            },
        }
    }

    #[test]
    fn verify_passes_then_catches_tampering() {
        let dir = tempfile::tempdir().unwrap();
        save_run(&train(&config()).unwrap(), dir.path()).unwrap();
        let report = verify_run(dir.path()).unwrap();
        assert!(report.is_ok());
        assert_eq!(report.steps_checked, 60);

        let path = dir.path().join("steps.csv");
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let mut cols: Vec<String> = lines[6].split(',').map(str::to_string).collect();
        cols[2] = format!("{}", cols[2].parse::<f64>().unwrap() * (1.0 + 1e-15));
        lines[6] = cols.join(",");
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        assert_eq!(verify_run(dir.path()).unwrap().mismatches, vec![5]);
    }

    #[test]
    fn landscape_writes_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        save_run(&train(&config()).unwrap(), dir.path()).unwrap();
        let out = dir.path().join("landscape");
        let report = landscape_from_run(dir.path(), &out, None, 5).unwrap();
        assert!(!report.projection.degenerate);
        let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
        assert!(traj.starts_with("epoch,pc1,pc2,lr_at_epoch,loss\n"));
        assert_eq!(traj.lines().count(), 8);
        let surface = std::fs::read_to_string(out.join("surface.csv")).unwrap();
        assert!(surface.starts_with("alpha,beta,loss\n"));
        assert_eq!(surface.lines().count(), 26);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("pca_meta.json")).unwrap()).unwrap();
        assert_eq!(meta["degenerate"], false);
    }
}
