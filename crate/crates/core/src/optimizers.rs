//! First-order update rules on flat `f64` parameter vectors.
//!
//! The learning rate is supplied per step by the caller (normally a
//! [`Schedule`](crate::schedules::Schedule)); optimizers hold only their
//! moment buffers and fixed hyperparameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("dimension mismatch: params {params}, grad {grad}, state {state}")]
    DimensionMismatch { params: usize, grad: usize, state: usize },
    #[error("non-finite gradient entry at index {index}")]
    NonFiniteGradient { index: usize },
    #[error("learning rate {0} must be positive and finite")]
    InvalidLearningRate(f64),
    #[error("invalid hyperparameter {name} = {value}")]
    InvalidHyperparameter { name: &'static str, value: f64 },
}

impl OptimError {
    /// True for errors that mean the run has blown up rather than been misused.
    pub fn is_divergence(&self) -> bool {
        matches!(self, OptimError::NonFiniteGradient { .. })
    }
}

fn check_inputs(params: &[f64], grad: &[f64], state_dim: usize, lr: f64) -> Result<(), OptimError> {
    if params.len() != grad.len() || params.len() != state_dim {
        return Err(OptimError::DimensionMismatch {
            params: params.len(),
            grad: grad.len(),
            state: state_dim,
        });
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(OptimError::InvalidLearningRate(lr));
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient { index });
    }
    Ok(())
}

/// Heavy-ball momentum: `v <- mu * v + g`, `params <- params - lr * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    velocity: Vec<f64>,
    momentum: f64,
}

impl SgdState {
    pub fn new(dim: usize, momentum: f64) -> Result<Self, OptimError> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(OptimError::InvalidHyperparameter { name: "momentum", value: momentum });
        }
        Ok(Self { velocity: vec![0.0; dim], momentum })
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }
}

/// One momentum-SGD step. Inputs are validated before anything is mutated.
pub fn sgd_step(params: &mut [f64], grad: &[f64], lr: f64, state: &mut SgdState) -> Result<(), OptimError> {
    check_inputs(params, grad, state.velocity.len(), lr)?;
    let mu = state.momentum;
    for ((p, v), &g) in params.iter_mut().zip(state.velocity.iter_mut()).zip(grad) {
        *v = mu * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
}

impl AdamState {
    pub fn new(dim: usize, beta1: f64, beta2: f64, eps: f64) -> Result<Self, OptimError> {
        if !(0.0..1.0).contains(&beta1) {
            return Err(OptimError::InvalidHyperparameter { name: "beta1", value: beta1 });
        }
        if !(0.0..1.0).contains(&beta2) {
            return Err(OptimError::InvalidHyperparameter { name: "beta2", value: beta2 });
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(OptimError::InvalidHyperparameter { name: "eps", value: eps });
        }
        Ok(Self { m: vec![0.0; dim], v: vec![0.0; dim], beta1, beta2, eps, t: 0 })
    }

    pub fn with_defaults(dim: usize) -> Self {
        Self::new(dim, 0.9, 0.999, 1e-8).expect("default hyperparameters are valid")
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.t
    }
}

pub fn adam_step(params: &mut [f64], grad: &[f64], lr: f64, state: &mut AdamState) -> Result<(), OptimError> {
    check_inputs(params, grad, state.m.len(), lr)?;
    state.t += 1;
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    for (((p, m), v), &g) in params.iter_mut().zip(state.m.iter_mut()).zip(state.v.iter_mut()).zip(grad) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Optimizer choice and hyperparameters, as written in a run config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerSpec {
    Sgd {
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerSpec {
    pub fn sgd() -> Self {
        OptimizerSpec::Sgd { momentum: default_momentum() }
    }

    pub fn adam() -> Self {
        OptimizerSpec::Adam { beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }

    /// Short name used in run names (`sgd`, `adam`).
    pub fn short_name(&self) -> &'static str {
        match self {
            OptimizerSpec::Sgd { .. } => "sgd",
            OptimizerSpec::Adam { .. } => "adam",
        }
    }

    pub fn build(&self, dim: usize) -> Result<Optimizer, OptimError> {
        Ok(match *self {
            OptimizerSpec::Sgd { momentum } => Optimizer::Sgd(SgdState::new(dim, momentum)?),
            OptimizerSpec::Adam { beta1, beta2, eps } => Optimizer::Adam(AdamState::new(dim, beta1, beta2, eps)?),
        })
    }
}

/// A live optimizer state of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd(SgdState),
    Adam(AdamState),
}

impl Optimizer {
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<(), OptimError> {
        match self {
            Optimizer::Sgd(state) => sgd_step(params, grad, lr, state),
            Optimizer::Adam(state) => adam_step(params, grad, lr, state),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plain_gradient_descent_with_zero_momentum() {
        let mut p = vec![1.0];
        let mut s = SgdState::new(1, 0.0).unwrap();
        sgd_step(&mut p, &[0.5], 0.1, &mut s).unwrap();
        assert_eq!(p, vec![0.95]);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut s = SgdState::new(3, 0.9).unwrap();
        sgd_step(&mut p, &[0.0; 3], 0.1, &mut s).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);

        let mut a = AdamState::with_defaults(3);
        adam_step(&mut p, &[0.0; 3], 0.1, &mut a).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(a.steps(), 1);
    }

    #[test]
    fn momentum_two_step_unroll() {
        // v1 = g, v2 = 0.9 g + g = 1.9 g; displacement = -lr (g + 1.9 g)
        let (g, lr) = (0.7, 0.05);
        let mut p = vec![0.0];
        let mut s = SgdState::new(1, 0.9).unwrap();
        sgd_step(&mut p, &[g], lr, &mut s).unwrap();
        sgd_step(&mut p, &[g], lr, &mut s).unwrap();
        assert!((p[0] + lr * g * 2.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_sign_step() {
        let mut p = vec![0.0];
        let mut s = AdamState::with_defaults(1);
        adam_step(&mut p, &[10.0], 1e-3, &mut s).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs_without_mutating() {
        let mut p = vec![1.0, 2.0];
        let mut s = SgdState::new(2, 0.5).unwrap();
        assert_eq!(
            sgd_step(&mut p, &[1.0], 0.1, &mut s),
            Err(OptimError::DimensionMismatch { params: 2, grad: 1, state: 2 })
        );
        let err = sgd_step(&mut p, &[1.0, f64::NAN], 0.1, &mut s).unwrap_err();
        assert_eq!(err, OptimError::NonFiniteGradient { index: 1 });
        assert!(err.is_divergence());
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(s.velocity(), &[0.0, 0.0]);

        let mut a = AdamState::with_defaults(2);
        assert!(adam_step(&mut p, &[f64::INFINITY, 0.0], 0.1, &mut a).is_err());
        assert_eq!(a.steps(), 0);
        assert!(adam_step(&mut p, &[1.0, 0.0], 0.0, &mut a).is_err());
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(SgdState::new(1, 1.0).is_err());
        assert!(AdamState::new(1, 0.9, 1.0, 1e-8).is_err());
        assert!(AdamState::new(1, 0.9, 0.999, 0.0).is_err());
    }

    #[test]
    fn spec_parses_with_defaults() {
        let spec: OptimizerSpec = toml::from_str("kind = \"adam\"").unwrap();
        assert_eq!(spec, OptimizerSpec::adam());
        let spec: OptimizerSpec = toml::from_str("kind = \"sgd\"\nmomentum = 0.5").unwrap();
        assert_eq!(spec, OptimizerSpec::Sgd { momentum: 0.5 });
    }

    proptest! {
        #[test]
        fn first_adam_step_magnitude(g in prop_oneof![1e-4f64..1e3, -1e3f64..-1e-4], lr in 1e-6f64..1.0) {
            let mut p = vec![0.0];
            let mut s = AdamState::with_defaults(1);
            adam_step(&mut p, &[g], lr, &mut s).unwrap();
            let step = p[0].abs();
            prop_assert!(step > lr * (1.0 - 1e-3) && step <= lr, "step {} lr {}", step, lr);
            prop_assert_eq!(p[0].signum(), -g.signum());
        }

        #[test]
        fn adam_second_moment_nonnegative(grads in proptest::collection::vec(proptest::collection::vec(-1e6f64..1e6, 4), 1..30)) {
            let mut p = vec![0.0; 4];
            let mut s = AdamState::with_defaults(4);
            for g in &grads {
                adam_step(&mut p, g, 1e-3, &mut s).unwrap();
                prop_assert!(s.second_moment().iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn zero_momentum_sgd_is_vanilla_gd(
            params in proptest::collection::vec(-10f64..10.0, 1..16),
            seed in proptest::collection::vec(-10f64..10.0, 16),
            lr in 1e-4f64..1.0,
        ) {
            let grad: Vec<f64> = seed[..params.len()].to_vec();
            let mut p = params.clone();
            let mut s = SgdState::new(p.len(), 0.0).unwrap();
            sgd_step(&mut p, &grad, lr, &mut s).unwrap();
            for i in 0..p.len() {
                prop_assert_eq!(p[i].to_bits(), (params[i] - lr * grad[i]).to_bits());
            }
        }

        #[test]
        fn single_step_is_linear_in_lr(g in proptest::collection::vec(-5f64..5.0, 3), lr in 1e-4f64..0.5) {
            for spec in [OptimizerSpec::Sgd { momentum: 0.9 }, OptimizerSpec::adam()] {
                let mut a = vec![0.0; 3];
                let mut b = vec![0.0; 3];
                spec.build(3).unwrap().step(&mut a, &g, lr).unwrap();
                spec.build(3).unwrap().step(&mut b, &g, 2.0 * lr).unwrap();
                for i in 0..3 {
                    prop_assert_eq!(b[i].to_bits(), (2.0 * a[i]).to_bits());
                }
            }
        }
    }
}
