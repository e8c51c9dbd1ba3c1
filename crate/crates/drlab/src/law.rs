//! The geometric-type marginal law G(r, p).
//!
//! G(r, p) puts mass `p` at 0 and `(1-p) r (1-r)^(k-1)` at integers k >= 1.
//! The survival mass `1-p` is tracked as its own field so that laws deep in
//! the subcritical regime (p within f64 epsilon of 1) keep full relative
//! accuracy in `1-p`.

use crate::error::{DrError, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricTypeLaw<R: Real> {
    r: R,
    p: R,
    one_minus_p: R,
}

impl<R: Real> GeometricTypeLaw<R> {
    /// Construct from (r, p). Boundary values are rejected: the recursion is
    /// defined on the open square (0,1)^2.
    pub fn new(r: R, p: R) -> Result<Self> {
        let zero = r.lit(0.0);
        let one = r.lit(1.0);
        if !(r > zero && r < one) || !r.is_finite() {
            return Err(DrError::InvalidParameter {
                name: "r",
                value: r.to_f64(),
                requirement: "0 < r < 1",
            });
        }
        if !(p > zero && p < one) || !p.is_finite() {
            return Err(DrError::InvalidParameter {
                name: "p",
                value: p.to_f64(),
                requirement: "0 < p < 1",
            });
        }
        let one_minus_p = one - &p;
        Ok(GeometricTypeLaw { r, p, one_minus_p })
    }

    /// Construct from (r, 1-p) when the survival mass is the quantity known
    /// to full relative accuracy.
    pub fn from_survival(r: R, one_minus_p: R) -> Result<Self> {
        let zero = r.lit(0.0);
        let one = r.lit(1.0);
        if !(r > zero && r < one) || !r.is_finite() {
            return Err(DrError::InvalidParameter {
                name: "r",
                value: r.to_f64(),
                requirement: "0 < r < 1",
            });
        }
        if !(one_minus_p > zero && one_minus_p < one) || !one_minus_p.is_finite() {
            return Err(DrError::InvalidParameter {
                name: "one_minus_p",
                value: one_minus_p.to_f64(),
                requirement: "0 < 1-p < 1",
            });
        }
        let p = one - &one_minus_p;
        Ok(GeometricTypeLaw { r, p, one_minus_p })
    }

    /// Internal constructor for trajectory records; skips the range check so
    /// that underflowed-to-zero fields (with log companions carrying the
    /// value) can still be stored.
    pub(crate) fn from_parts_unchecked(r: R, p: R, one_minus_p: R) -> Self {
        GeometricTypeLaw { r, p, one_minus_p }
    }

    pub fn r(&self) -> &R {
        &self.r
    }

    pub fn p(&self) -> &R {
        &self.p
    }

    /// Survival mass 1 - p = P(Y >= 1), held to full relative accuracy.
    pub fn survival(&self) -> &R {
        &self.one_minus_p
    }

    /// Mass at integer k >= 0.
    pub fn pmf(&self, k: u64) -> R {
        if k == 0 {
            self.p.clone()
        } else {
            let one = self.r.lit(1.0);
            self.one_minus_p.clone() * &self.r * (one - &self.r).powi((k - 1) as i64)
        }
    }

    /// Mass of the positive tail beyond k: P(Y > k) for k >= 0.
    pub fn tail(&self, k: u64) -> R {
        let one = self.r.lit(1.0);
        self.one_minus_p.clone() * (one - &self.r).powi(k as i64)
    }

    /// E(Y) = (1 - p) / r.
    pub fn mean(&self) -> R {
        self.one_minus_p.clone() / &self.r
    }

    /// Radius of convergence of the generating function, 1/(1-r).
    pub fn pgf_radius(&self) -> R {
        let one = self.r.lit(1.0);
        one.clone() / (one - &self.r)
    }

    /// E(s^Y) = (p + (r-p)s) / (1 - (1-r)s) for |s| < 1/(1-r).
    pub fn pgf(&self, s: &R) -> Result<R> {
        let one = self.r.lit(1.0);
        let radius = self.pgf_radius();
        if s.abs() >= radius {
            return Err(DrError::Domain {
                s: s.to_f64(),
                radius: radius.to_f64(),
            });
        }
        let num = self.p.clone() + (self.r.clone() - &self.p) * s;
        let den = one.clone() - (one - &self.r) * s;
        Ok(num / den)
    }

    /// E(s^Y) at s = 1 - eps, evaluated in a form with no cancellation:
    /// (r - (r-p) eps) / (r + eps - r eps). Accurate when both `r` and `eps`
    /// are tiny, which is where the direct formula loses all digits.
    pub fn pgf_one_minus(&self, eps: &R) -> R {
        let num = self.r.clone() - (self.r.clone() - &self.p) * eps;
        let den = self.r.clone() + eps - &(self.r.clone() * eps);
        num / den
    }

    /// Conditional mass P(Y = k | Y >= 1) = r (1-r)^(k-1): geometric(r).
    pub fn conditional_pmf(&self, k: u64) -> R {
        assert!(k >= 1, "conditional law lives on k >= 1");
        let one = self.r.lit(1.0);
        self.r.clone() * (one - &self.r).powi((k - 1) as i64)
    }
}
