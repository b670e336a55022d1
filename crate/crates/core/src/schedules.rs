//! Closed-form learning-rate policies.
//!
//! Every policy is a pure function of the global step index. The triangular
//! cyclical policy is 0-based (step 0 sits at `base_lr`); the inverse square
//! root policy is 1-based (its warmup fraction is `t / warmup_steps`).
//! [`Schedule::lr_at`] takes a 0-based training step and applies the right
//! convention for each policy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("base_lr ({base}) must be positive and strictly below max_lr ({max})")]
    InvalidBounds { base: f64, max: f64 },
    #[error("step_size must be at least 1")]
    ZeroStepSize,
    #[error("shrink factor {0} must lie in (0, 1]")]
    InvalidShrink(f64),
    #[error("learning rate {0} must be positive and finite")]
    InvalidLearningRate(f64),
    #[error("warmup_steps must be at least 1")]
    ZeroWarmup,
    #[error("inverse square root policy is undefined at step 0; steps are 1-based")]
    ZeroStep,
}

/// Per-cycle decay of the triangle amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Shrink {
    #[default]
    None,
    /// Cycle `k` peaks at `base + (max - base) * gamma^(k-1)`.
    PerCycle(f64),
}

impl Shrink {
    pub fn gamma(&self) -> f64 {
        match *self {
            Shrink::None => 1.0,
            Shrink::PerCycle(gamma) => gamma,
        }
    }
}

/// Triangular cyclical learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClrPolicy {
    base_lr: f64,
    max_lr: f64,
    step_size: u64,
    shrink: Shrink,
}

impl ClrPolicy {
    pub fn new(base_lr: f64, max_lr: f64, step_size: u64, shrink: Shrink) -> Result<Self, ScheduleError> {
        if !(base_lr.is_finite() && max_lr.is_finite() && base_lr > 0.0 && base_lr < max_lr) {
            return Err(ScheduleError::InvalidBounds { base: base_lr, max: max_lr });
        }
        if step_size == 0 {
            return Err(ScheduleError::ZeroStepSize);
        }
        if let Shrink::PerCycle(gamma) = shrink {
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(ScheduleError::InvalidShrink(gamma));
            }
        }
        Ok(Self { base_lr, max_lr, step_size, shrink })
    }

    pub fn base_lr(&self) -> f64 {
        self.base_lr
    }

    pub fn max_lr(&self) -> f64 {
        self.max_lr
    }

    pub fn step_size(&self) -> u64 {
        self.step_size
    }

    pub fn shrink(&self) -> Shrink {
        self.shrink
    }

    /// 1-based cycle index containing step `t`.
    pub fn cycle(&self, t: u64) -> u64 {
        t / (2 * self.step_size) + 1
    }

    /// Amplitude multiplier `gamma^(cycle-1)`.
    fn decay(&self, cycle: u64) -> f64 {
        match self.shrink {
            Shrink::None => 1.0,
            Shrink::PerCycle(gamma) => {
                let exponent = i32::try_from(cycle - 1).unwrap_or(i32::MAX);
                gamma.powi(exponent)
            }
        }
    }

    /// Peak learning rate reached in cycle `k` (1-based).
    pub fn peak(&self, cycle: u64) -> f64 {
        self.base_lr + (self.max_lr - self.base_lr) * self.decay(cycle.max(1))
    }

    /// Learning rate at 0-based step `t`.
    pub fn lr(&self, t: u64) -> f64 {
        let period = 2 * self.step_size;
        let cycle = self.cycle(t);
        // x = |t/s - 2*cycle + 1| computed on integers: the offset from the
        // cycle midpoint, in units of step_size.
        let offset = (t % period).abs_diff(self.step_size);
        let x = offset as f64 / self.step_size as f64;
        let lr = self.base_lr + (self.max_lr - self.base_lr) * (1.0 - x).max(0.0) * self.decay(cycle);
        lr.clamp(self.base_lr, self.max_lr)
    }
}

/// Linear warmup to `peak_lr`, then decay proportional to `1 / sqrt(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvPolicy {
    peak_lr: f64,
    warmup_steps: u64,
}

impl InvPolicy {
    pub fn new(peak_lr: f64, warmup_steps: u64) -> Result<Self, ScheduleError> {
        if !(peak_lr.is_finite() && peak_lr > 0.0) {
            return Err(ScheduleError::InvalidLearningRate(peak_lr));
        }
        if warmup_steps == 0 {
            return Err(ScheduleError::ZeroWarmup);
        }
        Ok(Self { peak_lr, warmup_steps })
    }

    pub fn peak_lr(&self) -> f64 {
        self.peak_lr
    }

    pub fn warmup_steps(&self) -> u64 {
        self.warmup_steps
    }

    /// Learning rate at 1-based step `t`.
    pub fn lr(&self, t: u64) -> Result<f64, ScheduleError> {
        if t == 0 {
            return Err(ScheduleError::ZeroStep);
        }
        let w = self.warmup_steps as f64;
        let t_f = t as f64;
        if t <= self.warmup_steps {
            Ok(self.peak_lr * t_f / w)
        } else {
            Ok(self.peak_lr * (w / t_f).sqrt())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPolicy {
    lr: f64,
}

impl ConstantPolicy {
    pub fn new(lr: f64) -> Result<Self, ScheduleError> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(ScheduleError::InvalidLearningRate(lr));
        }
        Ok(Self { lr })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }
}

/// A validated learning-rate policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Clr(ClrPolicy),
    Inv(InvPolicy),
    Constant(ConstantPolicy),
}

impl Schedule {
    /// Learning rate for 0-based training step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        match self {
            Schedule::Clr(p) => p.lr(step),
            Schedule::Inv(p) => p.lr(step + 1).expect("step + 1 is never zero"),
            Schedule::Constant(p) => p.lr(),
        }
    }

    /// The largest learning rate the policy can emit.
    pub fn peak_lr(&self) -> f64 {
        match self {
            Schedule::Clr(p) => p.max_lr(),
            Schedule::Inv(p) => p.peak_lr(),
            Schedule::Constant(p) => p.lr(),
        }
    }
}

/// Outcome of checking a half-cycle length against the 2x-10x epoch guideline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizeAdvice {
    pub within_guideline: bool,
    /// `step_size / iters_per_epoch`.
    pub epochs_per_half_cycle: f64,
}

/// Advisory check that `step_size` lies in `[2, 10]` epochs (inclusive).
/// Logs a warning when outside; never fails.
pub fn validate_step_size(step_size: u64, iters_per_epoch: u64) -> StepSizeAdvice {
    let ratio = step_size as f64 / iters_per_epoch.max(1) as f64;
    let within = step_size >= 2 * iters_per_epoch && step_size <= 10 * iters_per_epoch;
    if !within {
        log::warn!(
            "CLR step_size {step_size} is {ratio:.2} epochs; the usual range is 2-10 epochs \
             ({} to {} iterations)",
            2 * iters_per_epoch,
            10 * iters_per_epoch
        );
    }
    StepSizeAdvice { within_guideline: within, epochs_per_half_cycle: ratio }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clr(base: f64, max: f64, s: u64, shrink: Shrink) -> ClrPolicy {
        ClrPolicy::new(base, max, s, shrink).unwrap()
    }

    /// Walks the triangle wave one step at a time, flipping direction at
    /// every half-cycle and shrinking the amplitude at every cycle end.
    fn simulate_triangle(base: f64, max: f64, s: u64, gamma: f64, t_end: u64) -> f64 {
        let mut amplitude = max - base;
        let mut pos = 0.0_f64;
        let mut rising = true;
        let mut k = 0;
        for _ in 0..t_end {
            pos += if rising { 1.0 } else { -1.0 } / s as f64;
            k += 1;
            if k == s {
                k = 0;
                if rising {
                    rising = false;
                } else {
                    rising = true;
                    amplitude *= gamma;
                    pos = 0.0;
                }
            }
        }
        base + amplitude * pos
    }

    #[test]
    fn clr_anchor_values() {
        let p = clr(0.1, 0.5, 100, Shrink::None);
        assert_eq!(p.lr(0), 0.1);
        assert_eq!(p.lr(100), 0.5);
        assert!((p.lr(50) - 0.3).abs() < 1e-15);
        assert_eq!(p.lr(200), 0.1);
    }

    #[test]
    fn clr_second_cycle_peak_with_half_shrink() {
        let p = clr(0.1, 0.5, 100, Shrink::PerCycle(0.5));
        let oracle = simulate_triangle(0.1, 0.5, 100, 0.5, 300);
        assert!((oracle - 0.3).abs() < 1e-12, "oracle {oracle}");
        assert!((p.lr(300) - oracle).abs() < 1e-12);
    }

    #[test]
    fn clr_matches_step_by_step_simulation() {
        for &(s, gamma) in &[(3u64, 1.0), (7, 0.5), (10, 0.8)] {
            let p = clr(0.01, 1.0, s, Shrink::PerCycle(gamma));
            for t in 0..(8 * s) {
                let oracle = simulate_triangle(0.01, 1.0, s, gamma, t);
                assert!((p.lr(t) - oracle).abs() < 1e-12, "s={s} t={t}: {} vs {oracle}", p.lr(t));
            }
        }
    }

    #[test]
    fn clr_rejects_invalid_policies() {
        assert_eq!(
            ClrPolicy::new(0.5, 0.5, 10, Shrink::None),
            Err(ScheduleError::InvalidBounds { base: 0.5, max: 0.5 })
        );
        assert!(ClrPolicy::new(0.0, 0.5, 10, Shrink::None).is_err());
        assert_eq!(ClrPolicy::new(0.1, 0.5, 0, Shrink::None), Err(ScheduleError::ZeroStepSize));
        assert_eq!(
            ClrPolicy::new(0.1, 0.5, 10, Shrink::PerCycle(0.0)),
            Err(ScheduleError::InvalidShrink(0.0))
        );
        assert!(ClrPolicy::new(0.1, 0.5, 10, Shrink::PerCycle(1.5)).is_err());
        assert!(ClrPolicy::new(0.1, f64::NAN, 10, Shrink::None).is_err());
    }

    #[test]
    fn inv_anchor_values() {
        let p = InvPolicy::new(5e-4, 4000).unwrap();
        assert_eq!(p.lr(4000).unwrap(), 5e-4);
        assert!((p.lr(2000).unwrap() - 2.5e-4).abs() < 1e-18);
        assert!((p.lr(16000).unwrap() - 2.5e-4).abs() < 1e-18);
        assert_eq!(p.lr(0), Err(ScheduleError::ZeroStep));
    }

    #[test]
    fn schedule_uses_one_based_inv_steps() {
        let inv = InvPolicy::new(1.0, 4).unwrap();
        let s = Schedule::Inv(inv);
        assert_eq!(s.lr_at(0), 0.25);
        assert_eq!(s.lr_at(3), 1.0);
        let c = Schedule::Clr(clr(0.1, 0.5, 100, Shrink::None));
        assert_eq!(c.lr_at(0), 0.1);
    }

    #[test]
    fn step_size_guideline() {
        let e = 100;
        assert!(validate_step_size(450, e).within_guideline);
        assert!(!validate_step_size(100, e).within_guideline);
        assert!(validate_step_size(1000, e).within_guideline);
        assert!(validate_step_size(200, e).within_guideline);
        assert!(!validate_step_size(1001, e).within_guideline);
        assert_eq!(validate_step_size(450, e).epochs_per_half_cycle, 4.5);
    }

    fn arb_policy() -> impl Strategy<Value = ClrPolicy> {
        (1e-6f64..1.0, 1.01f64..100.0, 1u64..500, prop_oneof![Just(1.0), 0.05f64..1.0]).prop_map(
            |(base, ratio, s, gamma)| clr(base, base * ratio, s, Shrink::PerCycle(gamma)),
        )
    }

    proptest! {
        #[test]
        fn clr_stays_within_bounds(p in arb_policy(), t in 0u64..1_000_000) {
            let lr = p.lr(t);
            prop_assert!(lr >= p.base_lr() && lr <= p.max_lr());
        }

        #[test]
        fn clr_without_shrink_is_periodic(base in 1e-5f64..1.0, ratio in 1.1f64..50.0, s in 1u64..300, t in 0u64..100_000) {
            let p = clr(base, base * ratio, s, Shrink::None);
            prop_assert_eq!(p.lr(t).to_bits(), p.lr(t + 2 * s).to_bits());
        }

        #[test]
        fn clr_slope_within_a_half_cycle(p in arb_policy(), k in 1u64..20, j in 0u64..1000) {
            let s = p.step_size();
            let j = j % s;
            let t = 2 * s * (k - 1) + j;
            let expected = (p.max_lr() - p.base_lr()) * p.shrink().gamma().powi((k - 1) as i32) / s as f64;
            let up = p.lr(t + 1) - p.lr(t);
            prop_assert!((up - expected).abs() <= 1e-9 * p.max_lr());
        }

        #[test]
        fn inv_peaks_at_warmup_end(peak in 1e-6f64..10.0, w in 1u64..10_000, t in 1u64..1_000_000) {
            let p = InvPolicy::new(peak, w).unwrap();
            let lr = p.lr(t).unwrap();
            prop_assert!(lr <= peak);
            let next = p.lr(t + 1).unwrap();
            if t < w {
                prop_assert!(next >= lr);
            } else {
                prop_assert!(next <= lr);
            }
        }
    }
}
