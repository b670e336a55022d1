use std::collections::BTreeMap;

use super::{check_params, Batch, Evaluation, MetricKind, Task, TaskError};

/// Diagonal quadratic `0.5 * sum(lambda_i * theta_i^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask {
    spectrum: Vec<f64>,
    init: Vec<f64>,
}

impl QuadraticTask {
    /// Starts from all-ones parameters unless [`with_init`](Self::with_init) is used.
    pub fn new(spectrum: Vec<f64>) -> Result<Self, TaskError> {
        if spectrum.is_empty() {
            return Err(TaskError::InvalidConfig("quadratic spectrum is empty".into()));
        }
        if let Some(bad) = spectrum.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(TaskError::InvalidConfig(format!("eigenvalue {bad} must be positive")));
        }
        let init = vec![1.0; spectrum.len()];
        Ok(Self { spectrum, init })
    }

    pub fn with_init(mut self, init: Vec<f64>) -> Result<Self, TaskError> {
        check_params(&init, self.spectrum.len())?;
        self.init = init;
        Ok(self)
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.spectrum.iter().copied().fold(f64::MIN, f64::max)
    }

    fn value(&self, params: &[f64]) -> f64 {
        0.5 * self.spectrum.iter().zip(params).map(|(l, p)| l * p * p).sum::<f64>()
    }
}

/// Largest constant learning rate for which gradient descent still converges
/// is anything strictly below `2 / max(lambda)`.
pub fn gd_stability_threshold(task: &QuadraticTask) -> f64 {
    2.0 / task.max_eigenvalue()
}

impl Task for QuadraticTask {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn param_dim(&self) -> usize {
        self.spectrum.len()
    }

    fn init_params(&self, _seed: u64) -> Vec<f64> {
        self.init.clone()
    }

    fn train_size(&self) -> Option<usize> {
        None
    }

    fn sample_batch(&self, _seed: u64, _batch_size: usize) -> Batch {
        Batch::Full
    }

    fn loss(&self, params: &[f64], _batch: &Batch) -> Result<f64, TaskError> {
        check_params(params, self.param_dim())?;
        Ok(self.value(params))
    }

    fn loss_and_grad(&self, params: &[f64], _batch: &Batch) -> Result<(f64, Vec<f64>), TaskError> {
        check_params(params, self.param_dim())?;
        let grad = self.spectrum.iter().zip(params).map(|(l, p)| l * p).collect();
        Ok((self.value(params), grad))
    }

    fn evaluate(&self, params: &[f64]) -> Result<Evaluation, TaskError> {
        let loss = self.loss(params, &Batch::Full)?;
        Ok(Evaluation { loss, metric: loss })
    }

    fn metric_kind(&self) -> MetricKind {
        MetricKind::Loss
    }

    fn metadata(&self) -> BTreeMap<&'static str, f64> {
        BTreeMap::from([
            ("max_eigenvalue", self.max_eigenvalue()),
            ("min_eigenvalue", self.spectrum.iter().copied().fold(f64::MAX, f64::min)),
            ("stability_threshold", gd_stability_threshold(self)),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        let t = QuadraticTask::new(vec![1.0]).unwrap();
        assert_eq!(t.loss(&[2.0], &Batch::Full).unwrap(), 2.0);
        assert_eq!(t.loss(&[0.0], &Batch::Full).unwrap(), 0.0);
        let t = QuadraticTask::new(vec![3.0]).unwrap();
        assert_eq!(t.grad(&[2.0], &Batch::Full).unwrap(), vec![6.0]);
    }

    #[test]
    fn even_objective_has_zero_gradient_at_symmetric_point() {
        let t = QuadraticTask::new(vec![2.0, 5.0]).unwrap();
        let g = t.grad(&[0.0, 1.5], &Batch::Full).unwrap();
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn stability_threshold() {
        assert_eq!(gd_stability_threshold(&QuadraticTask::new(vec![1.0]).unwrap()), 2.0);
        assert_eq!(gd_stability_threshold(&QuadraticTask::new(vec![4.0, 1.0]).unwrap()), 0.5);
    }

    #[test]
    fn gd_just_above_threshold_blows_up() {
        let t = QuadraticTask::new(vec![4.0, 1.0]).unwrap();
        let lr = gd_stability_threshold(&t) * 1.01;
        let mut p = vec![1.0, 1.0];
        let start = p.iter().map(|x: &f64| x.abs()).fold(0.0, f64::max);
        for _ in 0..200 {
            let g = t.grad(&p, &Batch::Full).unwrap();
            for (pi, gi) in p.iter_mut().zip(g) {
                *pi -= lr * gi;
            }
        }
        let end = p.iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(end >= 10.0 * start, "|theta| grew only to {end}");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(QuadraticTask::new(vec![]).is_err());
        assert!(QuadraticTask::new(vec![1.0, -1.0]).is_err());
        let t = QuadraticTask::new(vec![1.0]).unwrap();
        assert_eq!(t.loss(&[f64::NAN], &Batch::Full), Err(TaskError::NonFiniteParams { index: 0 }));
        assert!(t.loss(&[1.0, 2.0], &Batch::Full).is_err());
    }
}
