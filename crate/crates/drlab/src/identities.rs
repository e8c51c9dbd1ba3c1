//! Exact algebraic identities of the recursion, evaluated as residuals.
//!
//! Three identities hold exactly along every trajectory:
//!
//!   (1)  m^-n E(Y_n) = r_0^-1 (1-p_0) prod_{i=1}^n (1-r_i)
//!   (2)  1/r_{n+2} - 1/r_{n+1} = m (1-r_{n+1}) (1/r_{n+1} - 1/r_n)
//!   (3)  p_{n+1}/r_{n+1} - p_n/r_n = 1 - q_{n+1}
//!
//! A fourth residual evaluates the variant of (3) with right-hand side
//! m (1 - p_n) instead of 1 - q_{n+1}. That variant fails direct evaluation
//! (the two sides differ by the factor r_{n+1}/r_n) and is reported raw, as
//! a diagnostic, not asserted.

use crate::error::{DrError, Result};
use crate::real::Real;
use crate::recursion::{StepRecord, Trajectory};

/// Residuals at one index. `r1`, `r2`, `r3_corrected` are normalized
/// (relative to the larger constituent); `r3_variant_raw` is the raw
/// difference of the diagnostic variant.
#[derive(Debug, Clone)]
pub struct IdentityRow<R: Real> {
    pub n: u64,
    pub r1: Option<R>,
    pub r2: Option<R>,
    pub r3_corrected: Option<R>,
    pub r3_variant_raw: Option<R>,
}

fn rel_residual<R: Real>(lhs: &R, rhs: &R) -> R {
    let denom = if lhs.abs() >= rhs.abs() {
        lhs.abs()
    } else {
        rhs.abs()
    };
    if denom <= denom.lit(0.0) {
        return denom.lit(0.0);
    }
    (lhs.clone() - rhs) / denom
}

/// 1/r_{n+1} - 1/r_n evaluated without forming reciprocals that can
/// overflow: equals (A_n - 1)/r_n = (m-1)(1-p_n)/r_n, taken from the log
/// companions when r has underflowed.
fn inv_r_gap<R: Real>(rec: &StepRecord<R>, m: &R) -> R {
    let one = m.lit(1.0);
    let factor = m.clone() - one;
    if *rec.r() > m.lit(f64::MIN_POSITIVE) {
        factor * rec.survival() / rec.r()
    } else {
        factor * (rec.log_one_minus_p.clone() - &rec.log_r).exp()
    }
}

/// Per-n residual table for a trajectory of length >= 3.
///
/// R1(n) is defined for every n; R2(n) needs records n, n+1, n+2; the R3
/// pair needs records n, n+1.
pub fn identity_residuals<R: Real>(traj: &Trajectory<R>) -> Result<Vec<IdentityRow<R>>> {
    if traj.len() < 3 {
        return Err(DrError::InsufficientLength {
            target: "identity_residuals",
            min: 3,
            got: traj.len(),
        });
    }
    let m = traj.m().clone();
    let one = m.lit(1.0);
    let ln_m = m.ln();
    let rec0 = traj.record(0);
    // log of r_0^-1 (1-p_0)
    let log_lead = rec0.log_one_minus_p.clone() - &rec0.log_r;

    let mut rows = Vec::with_capacity(traj.len());
    for n in 0..traj.len() {
        let rec = traj.record(n);

        // R1: compare in the log domain; the normalized residual is
        // exp(log lhs - log rhs) - 1.
        let log_lhs = rec.mean_log_m_scaled(&ln_m);
        let log_rhs = log_lead.clone() + &rec.cum_log_one_minus_r;
        let r1 = Some((log_lhs - log_rhs).exp() - &one);

        let r2 = if n + 2 < traj.len() {
            let gap_next = inv_r_gap(traj.record(n + 1), &m);
            let gap_here = inv_r_gap(rec, &m);
            let lhs = gap_next;
            let rhs = m.clone() * (one.clone() - traj.record(n + 1).r()) * gap_here;
            Some(rel_residual(&lhs, &rhs))
        } else {
            None
        };

        let (r3c, r3p) = if n + 1 < traj.len() {
            let next = traj.record(n + 1);
            let y_next = next.p_over_r();
            let y_here = rec.p_over_r();
            let q_next = next.q.clone().expect("successor record carries q");
            let lhs = y_next.clone() - &y_here;
            let rhs_corrected = one.clone() - &q_next;
            let denom = {
                let a = y_next.abs();
                let b = y_here.abs();
                let c = rhs_corrected.abs();
                let ab = if a >= b { a } else { b };
                if ab >= c {
                    ab
                } else {
                    c
                }
            };
            let r3c = (lhs.clone() - &rhs_corrected) / denom;
            let rhs_variant = m.clone() * rec.survival();
            let r3p = lhs - rhs_variant;
            (Some(r3c), Some(r3p))
        } else {
            (None, None)
        };

        rows.push(IdentityRow {
            n: rec.n,
            r1,
            r2,
            r3_corrected: r3c,
            r3_variant_raw: r3p,
        });
    }
    Ok(rows)
}

impl<R: Real> StepRecord<R> {
    /// log of m^-n E(Y_n) = -n ln m + log(1-p_n) - log r_n.
    fn mean_log_m_scaled(&self, ln_m: &R) -> R {
        let n_val = ln_m.lit(self.n as f64);
        self.log_one_minus_p.clone() - &self.log_r - n_val * ln_m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::law::GeometricTypeLaw;
    use crate::recursion::iterate;

    fn half_half_traj(steps: u64) -> Trajectory<f64> {
        let cfg = ModelConfig::new(2.0).unwrap();
        let law = GeometricTypeLaw::new(0.5, 0.5).unwrap();
        iterate(&law, &cfg, steps).unwrap()
    }

    #[test]
    fn requires_three_records() {
        let t = half_half_traj(1);
        assert!(matches!(
            identity_residuals(&t),
            Err(DrError::InsufficientLength { .. })
        ));
    }

    #[test]
    fn exact_rational_checks_at_n0() {
        let t = half_half_traj(3);
        let rows = identity_residuals(&t).unwrap();
        // R2(0) = (13/3 - 3) - 2*(2/3)*(3 - 2) = 0
        assert!(rows[0].r2.unwrap().abs() < 1e-14);
        // R3_corrected(0) = (5/3 - 1) - (1 - 1/3) = 0
        assert!(rows[0].r3_corrected.unwrap().abs() < 1e-14);
        // variant residual at n=0: 2/3 - 1 = -1/3 exactly
        assert!((rows[0].r3_variant_raw.unwrap() + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn residuals_stay_below_tolerance_along_run() {
        let t = half_half_traj(50);
        let rows = identity_residuals(&t).unwrap();
        for row in &rows {
            assert!(row.r1.unwrap().abs() <= 1e-12, "R1 at n={}", row.n);
            if let Some(r2) = row.r2 {
                assert!(r2.abs() <= 1e-12, "R2 at n={}", row.n);
            }
            if let Some(r3) = row.r3_corrected {
                assert!(r3.abs() <= 1e-12, "R3 at n={}", row.n);
            }
        }
    }

    #[test]
    fn telescoping_matches_cumulative_sum() {
        // p_n/r_n = p_0/r_0 + sum_{i=1}^{n} (1 - q_i), exactly.
        let t = half_half_traj(200);
        let y0 = t.record(0).p_over_r();
        for n in [1usize, 10, 50, 200] {
            let rec = t.record(n);
            let lhs = rec.p_over_r();
            let rhs = y0 + rec.cum_one_minus_q;
            assert!(
                (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0),
                "telescoping at n={n}: {lhs} vs {rhs}"
            );
        }
    }
}
