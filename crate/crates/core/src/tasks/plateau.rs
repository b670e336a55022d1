use std::collections::BTreeMap;

use rand::Rng;

use super::{check_params, Batch, Evaluation, MetricKind, Task, TaskError};
use crate::rng::{rng_for, Stream};

/// A long linear ramp feeding a quadratic basin.
///
/// Coordinate 0 sees `g * (len - x) + g^2 / (2c)` for `x <= len` and
/// `c/2 * (x - x_min)^2` beyond, with `x_min = len + g/c`; value and slope
/// match at the junction. Extra coordinates are independent `c/2 * theta^2`
/// terms. Training starts at the plateau entrance `x = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauTask {
    gradient: f64,
    length: f64,
    curvature: f64,
    extra_dims: usize,
}

impl PlateauTask {
    pub fn new(gradient: f64, length: f64, curvature: f64, extra_dims: usize) -> Result<Self, TaskError> {
        for (name, v) in [("plateau_gradient", gradient), ("plateau_length", length), ("basin_curvature", curvature)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(TaskError::InvalidConfig(format!("{name} = {v} must be positive")));
            }
        }
        Ok(Self { gradient, length, curvature, extra_dims })
    }

    pub fn plateau_gradient(&self) -> f64 {
        self.gradient
    }

    pub fn plateau_length(&self) -> f64 {
        self.length
    }

    pub fn basin_minimum(&self) -> f64 {
        self.length + self.gradient / self.curvature
    }

    /// Loss where the ramp meets the basin.
    pub fn junction_loss(&self) -> f64 {
        self.gradient * self.gradient / (2.0 * self.curvature)
    }

    pub fn in_basin(&self, params: &[f64]) -> bool {
        params[0] > self.length
    }

    /// Lower bound on constant-`lr` gradient-descent steps needed to cross
    /// the plateau: each step moves at most `lr * g * 1.1`.
    pub fn min_escape_steps(&self, lr: f64) -> f64 {
        self.length / (lr * self.gradient * 1.1)
    }

    fn ramp(&self, x: f64) -> (f64, f64) {
        if x <= self.length {
            (self.gradient * (self.length - x) + self.junction_loss(), -self.gradient)
        } else {
            let d = x - self.basin_minimum();
            (0.5 * self.curvature * d * d, self.curvature * d)
        }
    }

    fn value_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let (mut loss, g0) = self.ramp(params[0]);
        let mut grad = Vec::with_capacity(params.len());
        grad.push(g0);
        for &p in &params[1..] {
            loss += 0.5 * self.curvature * p * p;
            grad.push(self.curvature * p);
        }
        (loss, grad)
    }
}

impl Task for PlateauTask {
    fn name(&self) -> &'static str {
        "plateau"
    }

    fn param_dim(&self) -> usize {
        1 + self.extra_dims
    }

    fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_for(seed, Stream::Init, 0);
        let mut p = vec![0.0];
        p.extend((0..self.extra_dims).map(|_| rng.random_range(-0.5..0.5)));
        p
    }

    fn train_size(&self) -> Option<usize> {
        None
    }

    fn sample_batch(&self, _seed: u64, _batch_size: usize) -> Batch {
        Batch::Full
    }

    fn loss(&self, params: &[f64], _batch: &Batch) -> Result<f64, TaskError> {
        check_params(params, self.param_dim())?;
        Ok(self.value_and_grad(params).0)
    }

    fn loss_and_grad(&self, params: &[f64], _batch: &Batch) -> Result<(f64, Vec<f64>), TaskError> {
        check_params(params, self.param_dim())?;
        Ok(self.value_and_grad(params))
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
            ("plateau_gradient", self.gradient),
            ("plateau_length", self.length),
            ("basin_curvature", self.curvature),
            ("basin_minimum", self.basin_minimum()),
            ("entrance_loss", self.ramp(0.0).0),
        ])
    }
}
