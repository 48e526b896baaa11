use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Dimension, inverse temperature and the diagnostic exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d: usize,
    pub beta: f64,
    /// Window exponent, in (1/2, 1).
    pub nu: f64,
    /// In (1/ν - 1, 1).
    pub nu1: f64,
    /// Sub-ballistic exponent, in (0, 1).
    pub sigma: f64,
    /// Exponent of the q_iota ratio window.
    pub xi: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams { d: 3, beta: 0.2, nu: 0.6, nu1: 0.8, sigma: 0.6, xi: 0.2 }
    }
}

impl ModelParams {
    pub fn new(d: usize, beta: f64) -> Self {
        ModelParams { d, beta, ..Default::default() }
    }

    pub fn with_beta(self, beta: f64) -> Self {
        ModelParams { beta, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d > crate::walk::MAX_DIM {
            return Err(invalid("d", "dimension out of range"));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(invalid("beta", "must be finite and nonnegative"));
        }
        if !(self.nu > 0.5 && self.nu < 1.0) {
            return Err(invalid("nu", "must lie in (1/2, 1)"));
        }
        if !(self.nu1 > 1.0 / self.nu - 1.0 && self.nu1 < 1.0) {
            return Err(invalid("nu1", "must lie in (1/nu - 1, 1)"));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(invalid("sigma", "must lie in (0, 1)"));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(invalid("xi", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// β²/(1-β²); infinite for β >= 1.
    pub fn lambda(&self) -> f64 {
        lambda(self.beta)
    }

    pub fn weak_disorder(&self, alpha_d: f64) -> bool {
        alpha_d * self.lambda() < 1.0
    }
}

/// E[e^{β²τ} - 1] for τ ~ Exp(1).
pub fn lambda(beta: f64) -> f64 {
    let b2 = beta * beta;
    if b2 >= 1.0 {
        f64::INFINITY
    } else {
        b2 / (1.0 - b2)
    }
}

/// β* = 1/√(1+α) with the interval induced by an interval on α.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn weak_disorder_threshold(alpha: f64, alpha_lo: f64, alpha_hi: f64) -> Threshold {
    let f = |a: f64| 1.0 / (1.0 + a).sqrt();
    Threshold { value: f(alpha), lo: f(alpha_hi), hi: f(alpha_lo) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_arithmetic() {
        assert_eq!(weak_disorder_threshold(0.0, 0.0, 0.0).value, 1.0);
        assert_eq!(weak_disorder_threshold(3.0, 3.0, 3.0).value, 0.5);
        let th = weak_disorder_threshold(0.5, 0.49, 0.51);
        assert!(th.lo < th.value && th.value < th.hi);
    }

    #[test]
    fn lambda_and_flag() {
        assert!((lambda(0.5) - 1.0 / 3.0).abs() < 1e-15);
        assert!(lambda(1.0).is_infinite());
        let p = ModelParams::new(3, 0.8);
        assert!(p.weak_disorder(0.516));
        assert!(!p.with_beta(0.82).weak_disorder(0.516));
        assert!(ModelParams::default().validate().is_ok());
        assert!(ModelParams { nu: 0.5, ..Default::default() }.validate().is_err());
    }
}
