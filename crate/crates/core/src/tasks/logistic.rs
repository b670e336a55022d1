use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_params, Batch, Evaluation, MetricKind, Split, Task, TaskError};
use crate::rng::{rng_for, Stream};

/// Binary logistic regression on two Gaussian classes.
///
/// Class means sit at `+-separation/2` along a seeded unit direction. The
/// noise component along that direction is truncated to
/// `|z| < separation/2`, so the classes are always linearly separable;
/// the orthogonal components are standard normal.
#[derive(Debug, Clone)]
pub struct LogisticTask {
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
    direction: Vec<f64>,
    split: Split,
    separation: f64,
}

impl LogisticTask {
    pub fn new(n_samples: usize, n_features: usize, separation: f64, seed: u64) -> Result<Self, TaskError> {
        if n_samples < 5 {
            return Err(TaskError::InvalidConfig("logistic task needs at least 5 samples".into()));
        }
        if n_features == 0 {
            return Err(TaskError::InvalidConfig("logistic task needs at least one feature".into()));
        }
        if !(separation.is_finite() && separation > 0.0) {
            return Err(TaskError::InvalidConfig(format!("class_separation {separation} must be positive")));
        }
        let mut rng = rng_for(seed, Stream::Dataset, 0);
        let mut direction: Vec<f64> = (0..n_features).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
        direction.iter_mut().for_each(|d| *d /= norm);

        let half = separation / 2.0;
        let mut features = Vec::with_capacity(n_samples);
        let mut labels = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let y = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let mut x: Vec<f64> = (0..n_features).map(|_| StandardNormal.sample(&mut rng)).collect();
            let along: f64 = x.iter().zip(&direction).map(|(a, b)| a * b).sum();
            let z = loop {
                let z: f64 = StandardNormal.sample(&mut rng);
                if z.abs() < half {
                    break z;
                }
            };
            let shift = y * half + z - along;
            x.iter_mut().zip(&direction).for_each(|(xi, di)| *xi += shift * di);
            features.push(x);
            labels.push(y);
        }
        let split = Split::new(n_samples, seed);
        Ok(Self { features, labels, direction, split, separation })
    }

    pub fn n_features(&self) -> usize {
        self.direction.len()
    }

    /// The unit vector along which the class means are separated.
    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn samples(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.features.iter().map(Vec::as_slice).zip(self.labels.iter().copied())
    }

    fn margin(&self, params: &[f64], i: usize) -> f64 {
        let (w, b) = params.split_at(self.n_features());
        let z: f64 = w.iter().zip(&self.features[i]).map(|(a, x)| a * x).sum::<f64>() + b[0];
        self.labels[i] * z
    }

    fn mean_loss(&self, params: &[f64], idx: &[usize]) -> f64 {
        idx.iter().map(|&i| softplus(-self.margin(params, i))).sum::<f64>() / idx.len() as f64
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Task for LogisticTask {
    fn name(&self) -> &'static str {
        "logistic"
    }

    fn param_dim(&self) -> usize {
        self.n_features() + 1
    }

    fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_for(seed, Stream::Init, 0);
        (0..self.param_dim()).map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.01 * z
        }).collect()
    }

    fn train_size(&self) -> Option<usize> {
        Some(self.split.train.len())
    }

    fn sample_batch(&self, seed: u64, batch_size: usize) -> Batch {
        self.split.sample(seed, batch_size)
    }

    fn loss(&self, params: &[f64], batch: &Batch) -> Result<f64, TaskError> {
        check_params(params, self.param_dim())?;
        Ok(self.mean_loss(params, self.split.resolve(batch)))
    }

    fn loss_and_grad(&self, params: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>), TaskError> {
        check_params(params, self.param_dim())?;
        let idx = self.split.resolve(batch);
        let n = idx.len() as f64;
        let d = self.n_features();
        let mut grad = vec![0.0; d + 1];
        let mut loss = 0.0;
        for &i in idx {
            let m = self.margin(params, i);
            loss += softplus(-m);
            // d/dz softplus(-y z) = -y * sigmoid(-y z)
            let coef = -self.labels[i] * sigmoid(-m) / n;
            grad[..d].iter_mut().zip(&self.features[i]).for_each(|(g, x)| *g += coef * x);
            grad[d] += coef;
        }
        Ok((loss / n, grad))
    }

    fn evaluate(&self, params: &[f64]) -> Result<Evaluation, TaskError> {
        check_params(params, self.param_dim())?;
        let val = &self.split.val;
        let loss = self.mean_loss(params, val);
        let correct = val.iter().filter(|&&i| self.margin(params, i) > 0.0).count();
        Ok(Evaluation { loss, metric: correct as f64 / val.len() as f64 })
    }

    fn metric_kind(&self) -> MetricKind {
        MetricKind::Accuracy
    }

    fn metadata(&self) -> BTreeMap<&'static str, f64> {
        BTreeMap::from([
            ("class_separation", self.separation),
            ("n_train", self.split.train.len() as f64),
            ("n_val", self.split.val.len() as f64),
            ("bayes_accuracy", 1.0),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_is_pure_function_of_seed() {
        let a = LogisticTask::new(200, 4, 4.0, 11).unwrap();
        let b = LogisticTask::new(200, 4, 4.0, 11).unwrap();
        let c = LogisticTask::new(200, 4, 4.0, 12).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn classes_are_linearly_separable() {
        let t = LogisticTask::new(2000, 6, 4.0, 3).unwrap();
        for (x, y) in t.samples() {
            let proj: f64 = x.iter().zip(t.direction()).map(|(a, b)| a * b).sum();
            assert!(proj * y > 0.0);
        }
    }

    #[test]
    fn separating_direction_reaches_perfect_accuracy() {
        let t = LogisticTask::new(500, 5, 4.0, 8).unwrap();
        let mut p: Vec<f64> = t.direction().iter().map(|d| 5.0 * d).collect();
        p.push(0.0);
        let eval = t.evaluate(&p).unwrap();
        assert_eq!(eval.metric, 1.0);
        assert!(eval.loss < 2f64.ln());
    }

    #[test]
    fn zero_params_give_ln_two() {
        let t = LogisticTask::new(100, 3, 4.0, 1).unwrap();
        let l = t.loss(&[0.0; 4], &Batch::Full).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn stable_for_huge_margins() {
        assert_eq!(softplus(-800.0), 0.0);
        assert_eq!(softplus(800.0), 800.0);
        assert_eq!(sigmoid(-800.0), 0.0);
    }
}
