use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 10.0;
pub const DEFAULT_CONSTRAINT_EPSILON: f64 = 0.1;
pub const DEFAULT_DUAL_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DualMode {
    /// `lambda <- max(0, lambda + eta (c - eps))`.
    #[default]
    Direct,
    /// The same ascent applied to `log lambda`; lambda stays strictly positive.
    Log,
}

/// Lagrange multiplier of the trust-region constraint `E[1/2 delta^T I delta] <= eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub mode: DualMode,
}

impl Default for DualState {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            epsilon: DEFAULT_CONSTRAINT_EPSILON,
            eta: DEFAULT_DUAL_STEP,
            mode: DualMode::Direct,
        }
    }
}

impl DualState {
    pub fn new(lambda: f64, epsilon: f64, eta: f64, mode: DualMode) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and non-negative"));
        }
        if mode == DualMode::Log && lambda == 0.0 {
            return Err(Error::invalid("log-mode dual needs a positive lambda"));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid("constraint threshold must be positive"));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::invalid("dual step must be non-negative"));
        }
        Ok(Self {
            lambda,
            epsilon,
            eta,
            mode,
        })
    }

    /// Applies one projected ascent step in place and returns the new lambda.
    pub fn update(&mut self, constraint_value: f64) -> f64 {
        *self = dual_update(self, constraint_value);
        self.lambda
    }
}

pub fn dual_update(dual: &DualState, constraint_value: f64) -> DualState {
    let violation = constraint_value - dual.epsilon;
    let lambda = match dual.mode {
        DualMode::Direct => (dual.lambda + dual.eta * violation).max(0.0),
        DualMode::Log => (dual.lambda.ln() + dual.eta * violation).exp(),
    };
    DualState { lambda, ..*dual }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn update_examples() {
        let d = DualState::new(1.0, 0.3, 0.1, DualMode::Direct).unwrap();
        assert!((dual_update(&d, 0.5).lambda - 1.02).abs() < 1e-15);
        assert_eq!(dual_update(&d, 0.3).lambda, 1.0);
        let d = DualState::new(0.01, 0.5, 1.0, DualMode::Direct).unwrap();
        assert_eq!(dual_update(&d, 0.0).lambda, 0.0);
    }

    #[test]
    fn log_mode_stays_positive() {
        let mut d = DualState::new(1.0, 0.5, 5.0, DualMode::Log).unwrap();
        for _ in 0..50 {
            d.update(0.0);
        }
        assert!(d.lambda > 0.0);
        assert!(DualState::new(0.0, 0.5, 1.0, DualMode::Log).is_err());
    }

    #[test]
    fn defaults() {
        let d = DualState::default();
        assert_eq!((d.lambda, d.epsilon, d.eta), (10.0, 0.1, 1e-3));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(DualState::new(-1.0, 0.1, 0.1, DualMode::Direct).is_err());
        assert!(DualState::new(1.0, 0.0, 0.1, DualMode::Direct).is_err());
        assert!(DualState::new(1.0, 0.1, f64::NAN, DualMode::Direct).is_err());
    }

    proptest! {
        #[test]
        fn monotone_in_constraint(lambda in 0.0..50.0f64, eta in 0.0..5.0f64, c1 in 0.0..10.0f64, c2 in 0.0..10.0f64, log in any::<bool>()) {
            let mode = if log { DualMode::Log } else { DualMode::Direct };
            let d = DualState::new(lambda.max(1e-3), 0.1, eta, mode).unwrap();
            let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
            let a = dual_update(&d, lo).lambda;
            let b = dual_update(&d, hi).lambda;
            prop_assert!(a <= b);
            prop_assert!(a >= 0.0);
        }
    }
}
