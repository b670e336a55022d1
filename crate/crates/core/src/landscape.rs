//! Optimizer trajectory PCA and loss-surface grids.
//!
//! Checkpoints are stacked one per row and centered on the final
//! checkpoint, so the end of training projects to the origin. The top two
//! right singular vectors of that matrix span the plotting plane; they are
//! recovered from the small `E x E` Gram matrix since epochs are far fewer
//! than parameters.

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{dot, norm, symmetric_eigen};
use crate::tasks::{Batch, Task};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LandscapeError {
    #[error("need at least 3 checkpoints, got {0}")]
    TooFewCheckpoints(usize),
    #[error("checkpoint {index} has dimension {got}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error("grid resolution must be at least 3, got {0}")]
    Resolution(usize),
    #[error("surface directions must be nonzero and match the center dimension")]
    BadDirections,
    #[error("grid extent must be positive and finite, got {0}")]
    BadExtent(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMatrix {
    rows: Vec<Vec<f64>>,
    center: Vec<f64>,
}

impl TrajectoryMatrix {
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// `(epochs, params)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.center.len())
    }
}

/// Row `i` is checkpoint `i` minus the final checkpoint.
pub fn build_trajectory_matrix(checkpoints: &[Vec<f64>]) -> Result<TrajectoryMatrix, LandscapeError> {
    if checkpoints.len() < 3 {
        return Err(LandscapeError::TooFewCheckpoints(checkpoints.len()));
    }
    let expected = checkpoints[0].len();
    if let Some((index, c)) = checkpoints.iter().enumerate().find(|(_, c)| c.len() != expected) {
        return Err(LandscapeError::DimensionMismatch { index, expected, got: c.len() });
    }
    let center = checkpoints[checkpoints.len() - 1].clone();
    let rows = checkpoints.iter().map(|c| c.iter().zip(&center).map(|(a, b)| a - b).collect()).collect();
    Ok(TrajectoryMatrix { rows, center })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// One `(pc1, pc2)` pair per trajectory row.
    pub coords: Vec<[f64; 2]>,
    pub directions: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
    /// Set when every row is zero; coordinates and variances are then 0.
    pub degenerate: bool,
}

impl PcaProjection {
    /// Largest distance of any projected checkpoint from the origin.
    pub fn max_radius(&self) -> f64 {
        self.coords.iter().map(|c| c[0].hypot(c[1])).fold(0.0, f64::max)
    }
}

/// A unit vector orthogonal to `d` built from the first usable basis vector.
fn orthogonal_complement(d: &[f64]) -> Vec<f64> {
    let mut best = Vec::new();
    let mut best_norm = 0.0;
    for i in 0..d.len() {
        let mut e = vec![0.0; d.len()];
        e[i] = 1.0;
        let proj = d[i];
        e.iter_mut().zip(d).for_each(|(x, di)| *x -= proj * di);
        let n = norm(&e);
        if n > best_norm {
            best_norm = n;
            best = e;
        }
        if n > 0.5 {
            break;
        }
    }
    best.iter_mut().for_each(|x| *x /= best_norm);
    best
}

pub fn pca_project(m: &TrajectoryMatrix) -> PcaProjection {
    let (e, p) = m.shape();
    let total: f64 = m.rows.iter().map(|r| dot(r, r)).sum();
    if total == 0.0 || p == 0 {
        return PcaProjection {
            coords: vec![[0.0, 0.0]; e],
            directions: [vec![0.0; p], vec![0.0; p]],
            explained_variance: [0.0, 0.0],
            degenerate: true,
        };
    }

    let mut gram = vec![0.0; e * e];
    for i in 0..e {
        for j in i..e {
            let g = dot(&m.rows[i], &m.rows[j]);
            gram[i * e + j] = g;
            gram[j * e + i] = g;
        }
    }
    let (values, vectors) = symmetric_eigen(&gram, e);

    // v_k = M^T u_k / sigma_k
    let lift = |u: &[f64]| -> Vec<f64> {
        let mut v = vec![0.0; p];
        for (row, &w) in m.rows.iter().zip(u) {
            v.iter_mut().zip(row).for_each(|(vi, ri)| *vi += w * ri);
        }
        v
    };
    let mut d1 = lift(&vectors[0]);
    let n1 = norm(&d1);
    d1.iter_mut().for_each(|x| *x /= n1);

    // Eigenvalues below this are roundoff from a rank-1 trajectory.
    let lambda2 = values.get(1).copied().filter(|&l| l > values[0] * 1e-12).unwrap_or(0.0);
    let mut d2 = if lambda2 > 0.0 && p > 1 { lift(&vectors[1]) } else { Vec::new() };
    if !d2.is_empty() {
        let overlap = dot(&d1, &d2);
        d2.iter_mut().zip(&d1).for_each(|(x, a)| *x -= overlap * a);
        let n2 = norm(&d2);
        if n2 > 0.0 {
            d2.iter_mut().for_each(|x| *x /= n2);
        } else {
            d2.clear();
        }
    }
    if d2.is_empty() {
        d2 = if p > 1 { orthogonal_complement(&d1) } else { vec![0.0; p] };
    }

    let coords = m.rows.iter().map(|r| [dot(r, &d1), dot(r, &d2)]).collect();
    let explained_variance = [values[0].max(0.0) / total, lambda2 / total];
    PcaProjection { coords, directions: [d1, d2], explained_variance, degenerate: false }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `losses[i][j]` at `center + alphas[i] * d1 + betas[j] * d2`; `None`
    /// where the loss was not finite.
    pub losses: Vec<Vec<Option<f64>>>,
    pub center: Vec<f64>,
    pub directions: [Vec<f64>; 2],
}

/// `resolution` points spanning `[-extent, extent]`, symmetric about 0.
pub fn grid_axis(extent: f64, resolution: usize) -> Vec<f64> {
    let last = (resolution - 1) as f64;
    (0..resolution)
        .map(|i| {
            let mirrored = resolution - 1 - i;
            if i == mirrored {
                0.0
            } else if i < mirrored {
                -extent * (1.0 - 2.0 * i as f64 / last)
            } else {
                extent * (1.0 - 2.0 * mirrored as f64 / last)
            }
        })
        .collect()
}

/// Extent covering the trajectory with 20% margin (1.0 for a point trajectory).
pub fn default_extent(projection: &PcaProjection) -> f64 {
    let r = projection.max_radius();
    if r > 0.0 {
        1.2 * r
    } else {
        1.0
    }
}

/// Full-data loss on a `resolution x resolution` grid around `center`.
pub fn loss_surface_grid(
    task: &dyn Task,
    center: &[f64],
    d1: &[f64],
    d2: &[f64],
    extent: f64,
    resolution: usize,
) -> Result<SurfaceGrid, LandscapeError> {
    if resolution < 3 {
        return Err(LandscapeError::Resolution(resolution));
    }
    if !(extent.is_finite() && extent > 0.0) {
        return Err(LandscapeError::BadExtent(extent));
    }
    if d1.len() != center.len() || d2.len() != center.len() || norm(d1) == 0.0 || norm(d2) == 0.0 {
        return Err(LandscapeError::BadDirections);
    }
    let axis = grid_axis(extent, resolution);
    let losses = axis
        .par_iter()
        .map(|&a| {
            axis.iter()
                .map(|&b| {
                    let point: Vec<f64> =
                        center.iter().zip(d1).zip(d2).map(|((c, x), y)| c + a * x + b * y).collect();
                    task.loss(&point, &Batch::Full).ok().filter(|l| l.is_finite())
                })
                .collect()
        })
        .collect();
    Ok(SurfaceGrid {
        alphas: axis.clone(),
        betas: axis,
        losses,
        center: center.to_vec(),
        directions: [d1.to_vec(), d2.to_vec()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::QuadraticTask;

    #[test]
    fn centering_on_final_checkpoint() {
        let c = [1.0, 2.0];
        let d = [0.5, -1.0];
        let cps: Vec<Vec<f64>> = (0..3).map(|k| c.iter().zip(&d).map(|(a, b)| a + k as f64 * b).collect()).collect();
        let m = build_trajectory_matrix(&cps).unwrap();
        assert_eq!(m.rows(), &[vec![-1.0, 2.0], vec![-0.5, 1.0], vec![0.0, 0.0]]);
        assert_eq!(m.center(), &[2.0, 0.0]);
    }

    #[test]
    fn identical_checkpoints_are_degenerate() {
        let cps = vec![vec![1.0, 2.0, 3.0]; 4];
        let m = build_trajectory_matrix(&cps).unwrap();
        assert!(m.rows().iter().all(|r| r.iter().all(|x| *x == 0.0)));
        let p = pca_project(&m);
        assert!(p.degenerate);
        assert_eq!(p.explained_variance, [0.0, 0.0]);
        assert!(p.coords.iter().all(|c| *c == [0.0, 0.0]));
    }

    #[test]
    fn rejects_bad_checkpoints() {
        assert_eq!(
            build_trajectory_matrix(&[vec![1.0], vec![2.0]]),
            Err(LandscapeError::TooFewCheckpoints(2))
        );
        assert_eq!(
            build_trajectory_matrix(&[vec![1.0], vec![2.0, 3.0], vec![1.0]]),
            Err(LandscapeError::DimensionMismatch { index: 1, expected: 1, got: 2 })
        );
    }

    #[test]
    fn shape_contract() {
        let cps: Vec<Vec<f64>> = (0..50).map(|e| (0..10_000).map(|i| ((e * 31 + i) % 17) as f64).collect()).collect();
        let m = build_trajectory_matrix(&cps).unwrap();
        assert_eq!(m.shape(), (50, 10_000));
    }

    #[test]
    fn rank_one_trajectory_gets_orthonormal_second_direction() {
        let cps: Vec<Vec<f64>> = (0..5).map(|k| vec![k as f64, 2.0 * k as f64, 0.0]).collect();
        let p = pca_project(&build_trajectory_matrix(&cps).unwrap());
        assert!(!p.degenerate);
        assert!((p.explained_variance[0] - 1.0).abs() < 1e-12);
        assert!(p.explained_variance[1].abs() < 1e-12);
        assert!(dot(&p.directions[0], &p.directions[1]).abs() < 1e-12);
        assert!((norm(&p.directions[1]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn final_checkpoint_projects_to_origin() {
        let cps: Vec<Vec<f64>> = (0..6).map(|k| vec![(k as f64).sin(), (k as f64).cos(), k as f64]).collect();
        let p = pca_project(&build_trajectory_matrix(&cps).unwrap());
        assert_eq!(*p.coords.last().unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn axis_is_symmetric() {
        let a = grid_axis(1.5, 7);
        assert_eq!(a[3], 0.0);
        assert_eq!(a[0], -1.5);
        assert_eq!(a[6], 1.5);
        for i in 0..7 {
            assert_eq!(a[i], -a[6 - i]);
        }
    }

    #[test]
    fn quadratic_surface_closed_form() {
        let task = QuadraticTask::new(vec![2.0, 0.5]).unwrap();
        let g = loss_surface_grid(&task, &[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], 2.0, 9).unwrap();
        for (i, a) in g.alphas.iter().enumerate() {
            for (j, b) in g.betas.iter().enumerate() {
                let expect = 0.5 * (2.0 * a * a + 0.5 * b * b);
                assert!((g.losses[i][j].unwrap() - expect).abs() <= 1e-12);
                assert_eq!(g.losses[i][j], g.losses[8 - i][8 - j]);
            }
        }
        assert_eq!(g.losses[4][4], Some(0.0));
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        let task = QuadraticTask::new(vec![1.0]).unwrap();
        assert_eq!(
            loss_surface_grid(&task, &[0.0], &[1.0], &[1.0], 1.0, 2),
            Err(LandscapeError::Resolution(2))
        );
        assert_eq!(
            loss_surface_grid(&task, &[0.0], &[0.0], &[1.0], 1.0, 3),
            Err(LandscapeError::BadDirections)
        );
    }
}
