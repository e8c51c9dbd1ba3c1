//! Model configuration: offspring mean, precision and tolerances.

use crate::error::{DrError, Result};
use crate::real::Precision;

/// Configuration of the offspring law and numerical policy.
///
/// The offspring distribution is geometric on {1, 2, ...} with mean `m`:
/// P(eta = n) = (1/m)(1 - 1/m)^(n-1).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ModelConfig {
    /// Offspring mean, strictly greater than 1.
    pub m: f64,
    /// Arithmetic precision for recursion state.
    pub precision: Precision,
    /// Relative tolerance for the exact-identity suite.
    pub identity_tol: f64,
    /// Hard cap on iteration counts accepted by `iterate`.
    pub max_steps: u64,
}

impl ModelConfig {
    pub const DEFAULT_IDENTITY_TOL: f64 = 1e-12;
    pub const DEFAULT_MAX_STEPS: u64 = 10_000_000;

    pub fn new(m: f64) -> Result<Self> {
        if !(m > 1.0) || !m.is_finite() {
            return Err(DrError::InvalidParameter {
                name: "m",
                value: m,
                requirement: "offspring mean must satisfy m > 1",
            });
        }
        Ok(ModelConfig {
            m,
            precision: Precision::Standard,
            identity_tol: Self::DEFAULT_IDENTITY_TOL,
            max_steps: Self::DEFAULT_MAX_STEPS,
        })
    }

    pub fn with_precision(mut self, precision: Precision) -> Result<Self> {
        if let Precision::Extended { digits } = precision {
            if digits < 30 {
                return Err(DrError::InvalidParameter {
                    name: "digits",
                    value: digits as f64,
                    requirement: "extended precision needs at least 30 digits",
                });
            }
        }
        self.precision = precision;
        Ok(self)
    }

    /// P(eta = n) for n >= 1.
    pub fn offspring_pmf(&self, n: u64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        (1.0 / self.m) * (1.0 - 1.0 / self.m).powi((n - 1) as i32)
    }

    /// Mass of the offspring law beyond `n`, P(eta > n) = (1 - 1/m)^n.
    pub fn offspring_tail(&self, n: u64) -> f64 {
        (1.0 - 1.0 / self.m).powi(n as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_supercritical_mean() {
        assert!(ModelConfig::new(1.0).is_err());
        assert!(ModelConfig::new(0.5).is_err());
        assert!(ModelConfig::new(f64::NAN).is_err());
        assert!(ModelConfig::new(1.0 + 1e-12).is_ok());
    }

    #[test]
    fn offspring_pmf_normalizes_with_tail() {
        for &m in &[1.5, 2.0, 3.7, 5.0] {
            let cfg = ModelConfig::new(m).unwrap();
            let n_trunc = 200u64;
            let sum: f64 = (1..=n_trunc).map(|k| cfg.offspring_pmf(k)).sum();
            let total = sum + cfg.offspring_tail(n_trunc);
            assert!(
                (total - 1.0).abs() < 1e-12,
                "m={m}: pmf sum {total} not within 1e-12 of 1"
            );
        }
    }

    #[test]
    fn extended_precision_floor() {
        let cfg = ModelConfig::new(2.0).unwrap();
        assert!(cfg
            .clone()
            .with_precision(Precision::Extended { digits: 20 })
            .is_err());
        assert!(cfg
            .with_precision(Precision::Extended { digits: 50 })
            .is_ok());
    }
}
