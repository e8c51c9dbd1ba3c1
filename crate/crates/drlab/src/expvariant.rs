//! The exponential-type marginal recursion, the continuous-marginal
//! counterpart of the geometric-type map:
//!
//!   lambda' = e^-alpha lambda / (1 - (1 - e^-alpha) p),
//!   p'      = 1 - e^-lambda' (1 - lambda' p / lambda).
//!
//! `alpha` has no canonical value here; the default alpha = ln m makes
//! e^-alpha = 1/m, the structural parallel of the geometric model, and every
//! run echoes the alpha it used.

use crate::error::{DrError, Result};

/// Law with density p delta_0 + (1-p) lambda e^(-lambda x) on x >= 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentialTypeLaw {
    pub lambda: f64,
    pub p: f64,
}

impl ExponentialTypeLaw {
    pub fn new(lambda: f64, p: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(DrError::InvalidParameter {
                name: "lambda",
                value: lambda,
                requirement: "lambda > 0",
            });
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(DrError::InvalidParameter {
                name: "p",
                value: p,
                requirement: "0 < p < 1",
            });
        }
        Ok(ExponentialTypeLaw { lambda, p })
    }

    /// E(X) = (1-p)/lambda.
    pub fn mean(&self) -> f64 {
        (1.0 - self.p) / self.lambda
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpVariantConfig {
    pub m: f64,
    pub alpha: f64,
}

impl ExpVariantConfig {
    /// Default alpha = ln m.
    pub fn new(m: f64) -> Result<Self> {
        if !(m > 1.0) || !m.is_finite() {
            return Err(DrError::InvalidParameter {
                name: "m",
                value: m,
                requirement: "m > 1",
            });
        }
        Ok(ExpVariantConfig { m, alpha: m.ln() })
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(DrError::InvalidParameter {
                name: "alpha",
                value: alpha,
                requirement: "alpha > 0",
            });
        }
        self.alpha = alpha;
        Ok(self)
    }
}

/// One step of the exponential-type recursion.
pub fn exp_step(law: &ExponentialTypeLaw, cfg: &ExpVariantConfig) -> ExponentialTypeLaw {
    let em = (-cfg.alpha).exp();
    let lambda1 = em * law.lambda / (1.0 - (1.0 - em) * law.p);
    let ratio = lambda1 * law.p / law.lambda;
    let p1 = 1.0 - (-lambda1).exp() * (1.0 - ratio);
    debug_assert!(lambda1 < law.lambda);
    debug_assert!(ratio > 0.0 && ratio < 1.0);
    ExponentialTypeLaw {
        lambda: lambda1,
        p: p1,
    }
}

/// Iterate `steps` steps, returning the sequence of laws from n = 0.
pub fn exp_iterate(
    law0: &ExponentialTypeLaw,
    cfg: &ExpVariantConfig,
    steps: u64,
    max_steps: u64,
) -> Result<Vec<ExponentialTypeLaw>> {
    if steps > max_steps {
        return Err(DrError::ResourceBudget {
            what: "steps",
            requested: steps,
            maximum: max_steps,
        });
    }
    let mut out = Vec::with_capacity(steps as usize + 1);
    out.push(law0.clone());
    let mut cur = law0.clone();
    for _ in 0..steps {
        cur = exp_step(&cur, cfg);
        out.push(cur.clone());
    }
    Ok(out)
}
