//! Asymptotic expansions of (r_n, p_n) in each regime, derived functionals
//! (survival, mean, generating function), and finite-n coefficient
//! estimators that confront the stated constants with exact trajectories.
//!
//! Supercritical (r_* = 0, p_* = 0), with t = 1/(F m^n):
//!   r_n = t - n m t^2 + o(n m^-2n)
//!   p_n = n m t + (p0/r0 - m Q) t - (n m t)^2 + o(n^2 m^-2n)
//! Subcritical (r_* > 1 - 1/m, p_* = 1), with g = gamma_* = m(1 - r_*):
//!   r_n = r_* + K r_*^2 g^n/(1-g) + (1 + m r_*/(1-g^2)) K^2 r_*^3 g^2n/(1-g)^2 + o(g^2n)
//!   p_n = 1 - K r_* g^n/(m-1) - (1 + m r_*/(1-g)) K^2 r_*^2 g^2n/((m-1)(1-g)) + o(g^2n)
//! Critical (r_* = 1 - 1/m, p_* = 1):
//!   r_n = 1 - 1/m + 2/(mn) - c2 log n/n^2 + o(log n/n^2),   c2 = 4(m+1)/(3m(m-1))
//!   p_n = 1 - 2/((m-1)^2 n^2) - c3 log n/n^3 + o(log n/n^3), c3 = 8(m+1)/(3(m-1)^3)
//!
//! The supercritical p-coefficient in its conventional form (leading term n/(F m^(n-1)))
//! inherits the p/r telescoping variant that fails direct evaluation; the
//! estimators below measure the actual coefficient. Natural logarithms
//! throughout.

use serde::Serialize;

use crate::error::{DrError, Result};
use crate::real::Real;
use crate::recursion::Trajectory;

/// Constants needed to evaluate the expansions of one regime.
#[derive(Debug, Clone)]
pub enum RegimeConstants<R: Real> {
    Supercritical {
        /// log F_infinity (the value itself may underflow no scalar here).
        f_log: R,
        q: R,
        p0_over_r0: R,
    },
    Subcritical {
        r_star: R,
        k: R,
    },
    Critical,
}

/// Predicted (r_n, p_n) plus log companions for the supercritical case.
#[derive(Debug, Clone)]
pub struct ExpansionPair<R: Real> {
    pub r_pred: R,
    pub p_pred: R,
    /// log of the leading positive part, usable when the value underflows.
    pub r_pred_log: Option<R>,
}

/// Supercritical two-term expansions, evaluated through t = 1/(F m^n) in
/// the log domain so large n survives m^-2n underflow.
pub fn expand_supercritical<R: Real>(
    n: u64,
    f_log: &R,
    q: &R,
    p0_over_r0: &R,
    m: &R,
) -> ExpansionPair<R> {
    let n_val = m.lit(n as f64);
    let log_t = -(f_log.clone() + n_val.clone() * m.ln());
    let t = log_t.exp();
    let nmt = n_val.clone() * m * &t;
    let r_pred = t.clone() * (m.lit(1.0) - &nmt);
    let c = p0_over_r0.clone() - m.clone() * q;
    let p_pred = nmt.clone() + t.clone() * &c - nmt.clone() * &nmt;
    // log r_pred = log t + ln(1 - n m t): valid while n m t < 1
    let r_pred_log = if nmt < m.lit(1.0) {
        Some(log_t.clone() + (-nmt).ln_1p())
    } else {
        None
    };
    ExpansionPair {
        r_pred,
        p_pred,
        r_pred_log,
    }
}

/// Subcritical two-term expansions.
pub fn expand_subcritical<R: Real>(n: u64, r_star: &R, k: &R, m: &R) -> ExpansionPair<R> {
    let one = m.lit(1.0);
    let g = m.clone() * (one.clone() - r_star);
    let gn = g.powi(n as i64);
    let g2n = gn.clone() * &gn;
    let one_minus_g = one.clone() - &g;
    let one_minus_g2 = one.clone() - g.clone() * &g;
    let r2 = r_star.clone() * r_star;
    let r3 = r2.clone() * r_star;
    let k2 = k.clone() * k;

    let r_first = k.clone() * &r2 * &gn / &one_minus_g;
    let r_second = (one.clone() + m.clone() * r_star / &one_minus_g2) * &k2 * &r3 * &g2n
        / (one_minus_g.clone() * &one_minus_g);
    let r_pred = r_star.clone() + &r_first + &r_second;

    let m1 = m.clone() - &one;
    let p_first = k.clone() * r_star * &gn / &m1;
    let p_second = (one.clone() + m.clone() * r_star / &one_minus_g) * &k2 * &r2 * &g2n
        / (m1.clone() * &one_minus_g);
    let p_pred = one - &p_first - &p_second;

    ExpansionPair {
        r_pred,
        p_pred,
        r_pred_log: None,
    }
}

/// Critical two-term expansions; requires n >= 2 for the log n term.
pub fn expand_critical<R: Real>(n: u64, m: &R) -> Result<ExpansionPair<R>> {
    if n < 2 {
        return Err(DrError::InvalidParameter {
            name: "n",
            value: n as f64,
            requirement: "critical expansion needs n >= 2",
        });
    }
    let one = m.lit(1.0);
    let n_val = m.lit(n as f64);
    let log_n = n_val.ln();
    let n2 = n_val.clone() * &n_val;
    let n3 = n2.clone() * &n_val;
    let m1 = m.clone() - &one;
    let c2 = m.lit(4.0) * (m.clone() + &one) / (m.lit(3.0) * m * &m1);
    let c3 = m.lit(8.0) * (m.clone() + &one) / (m.lit(3.0) * &m1 * &m1 * &m1);
    let r_pred =
        one.clone() - one.clone() / m + m.lit(2.0) / (m.clone() * &n_val) - c2 * &log_n / &n2;
    let p_pred = one.clone() - m.lit(2.0) / (m1.clone() * &m1 * &n2) - c3 * &log_n / &n3;
    Ok(ExpansionPair {
        r_pred,
        p_pred,
        r_pred_log: None,
    })
}

/// Values of the corollary expansions at one n.
#[derive(Debug, Clone)]
pub struct CorollaryValues<R: Real> {
    pub survival_pred: R,
    pub mean_pred: R,
    /// E(s^{Y_n}) expansion, present when `s` was supplied and in range.
    pub pgf_pred: Option<R>,
    /// Critical-regime E(m^{Y_n}) expansion.
    pub pgf_at_m_pred: Option<R>,
}

/// Evaluate the derived-functional expansions of the active regime at n.
/// `s` must lie inside the regime's radius: |s| < 1 (supercritical),
/// |s| < 1/(1-r_*) (subcritical), |s| < m (critical).
pub fn corollary_values<R: Real>(
    constants: &RegimeConstants<R>,
    n: u64,
    m: &R,
    s: Option<&R>,
) -> Result<CorollaryValues<R>> {
    let one = m.lit(1.0);
    match constants {
        RegimeConstants::Supercritical {
            f_log,
            q,
            p0_over_r0,
        } => {
            let pair = expand_supercritical(n, f_log, q, p0_over_r0, m);
            let survival_pred = one.clone() - &pair.p_pred;
            // E(Y_n) = F m^n + o(n): report the leading term.
            let n_val = m.lit(n as f64);
            let mean_pred = (f_log.clone() + n_val.clone() * m.ln()).exp();
            let pgf_pred = match s {
                Some(s) => {
                    if s.abs() >= one {
                        return Err(DrError::Domain {
                            s: s.to_f64(),
                            radius: 1.0,
                        });
                    }
                    // E(s^Y) = p_pred + (s/(1-s)) t  with t = 1/(F m^n)
                    let t = (-(f_log.clone() + n_val * m.ln())).exp();
                    Some(pair.p_pred.clone() + s.clone() / (one.clone() - s) * t)
                }
                None => None,
            };
            Ok(CorollaryValues {
                survival_pred,
                mean_pred,
                pgf_pred,
                pgf_at_m_pred: None,
            })
        }
        RegimeConstants::Subcritical { r_star, k } => {
            let g = m.clone() * (one.clone() - r_star);
            let gn = g.powi(n as i64);
            let g2n = gn.clone() * &gn;
            let m1 = m.clone() - &one;
            let one_minus_g = one.clone() - &g;
            let k2 = k.clone() * k;
            let r2 = r_star.clone() * r_star;
            // survival = 1 - p_pred (second-order sign from the p expansion)
            let survival_pred = k.clone() * r_star * &gn / &m1
                + (one.clone() + m.clone() * r_star / &one_minus_g) * &k2 * &r2 * &g2n
                    / (m1.clone() * &one_minus_g);
            // E(Y_n) = K g^n/(m-1) + m K^2 r_* g^2n/((m-1)(1-g)^2) + o(g^2n)
            let mean_pred = k.clone() * &gn / &m1
                + m.clone() * &k2 * r_star * &g2n / (m1.clone() * &one_minus_g * &one_minus_g);
            let pgf_pred = match s {
                Some(s) => {
                    let radius = one.clone() / (one.clone() - r_star);
                    if s.abs() >= radius {
                        return Err(DrError::Domain {
                            s: s.to_f64(),
                            radius: radius.to_f64(),
                        });
                    }
                    let denom = one.clone() - (one.clone() - r_star) * s;
                    let bracket = one.clone() + m.clone() * r_star / &one_minus_g
                        - s.clone() * r_star / &denom;
                    let inner = k.clone() * r_star * &gn / &m1
                        + k2.clone() * &r2 * &g2n / (m1.clone() * &one_minus_g) * bracket;
                    Some(one.clone() + (s.clone() - &one) / denom * inner)
                }
                None => None,
            };
            Ok(CorollaryValues {
                survival_pred,
                mean_pred,
                pgf_pred,
                pgf_at_m_pred: None,
            })
        }
        RegimeConstants::Critical => {
            if n < 2 {
                return Err(DrError::InvalidParameter {
                    name: "n",
                    value: n as f64,
                    requirement: "critical corollaries need n >= 2",
                });
            }
            let n_val = m.lit(n as f64);
            let log_n = n_val.ln();
            let n2 = n_val.clone() * &n_val;
            let n3 = n2.clone() * &n_val;
            let m1 = m.clone() - &one;
            let m1_2 = m1.clone() * &m1;
            let m1_3 = m1_2.clone() * &m1;
            let mp1 = m.clone() + &one;
            // P(Y_n >= 1) = 2/((m-1)^2 n^2) + 8(m+1) log n/(3 (m-1)^3 n^3) + ...
            let survival_pred = m.lit(2.0) / (m1_2.clone() * &n2)
                + m.lit(8.0) * &mp1 * &log_n / (m.lit(3.0) * &m1_3 * &n3);
            // E(Y_n) = 2m/((m-1)^3 n^2) + 8m(m+1) log n/(3(m-1)^4 n^3) + ...
            let mean_pred = m.lit(2.0) * m / (m1_3.clone() * &n2)
                + m.lit(8.0) * m * &mp1 * &log_n / (m.lit(3.0) * &m1_3 * &m1 * &n3);
            let pgf_pred = match s {
                Some(s) => {
                    if s.abs() >= *m {
                        return Err(DrError::Domain {
                            s: s.to_f64(),
                            radius: m.to_f64(),
                        });
                    }
                    let denom = one.clone() - s.clone() / m;
                    Some(one.clone() + (s.clone() - &one) / denom * &survival_pred)
                }
                None => None,
            };
            // E(m^{Y_n}) = 1 + 1/((m-1)n) + 2(m+1) log n/((m-1)^2 n^2) + ...
            let pgf_at_m_pred = Some(
                one.clone()
                    + one.clone() / (m1.clone() * &n_val)
                    + m.lit(2.0) * &mp1 * &log_n / (m1_2 * &n2),
            );
            Ok(CorollaryValues {
                survival_pred,
                mean_pred,
                pgf_pred,
                pgf_at_m_pred,
            })
        }
    }
}

/// One row of an expansion-versus-exact comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ExpansionValue {
    pub n: u64,
    pub predicted: f64,
    pub exact: f64,
    pub abs_residual: f64,
    /// Residual divided by the magnitude of the last retained expansion
    /// term (the scale of the first omitted order).
    pub normalized_residual: f64,
}

/// Compare the regime's r- and p-expansions against the exact trajectory.
/// Returns (r rows, p rows). Exact values come from the trajectory only.
pub fn compare_expansions<R: Real>(
    traj: &Trajectory<R>,
    constants: &RegimeConstants<R>,
) -> Result<(Vec<ExpansionValue>, Vec<ExpansionValue>)> {
    let m = traj.m().clone();
    let one = m.lit(1.0);
    let mut r_rows = Vec::new();
    let mut p_rows = Vec::new();
    for rec in &traj.records {
        let n = rec.n;
        let (pair, r_scale, p_scale) = match constants {
            RegimeConstants::Supercritical {
                f_log,
                q,
                p0_over_r0,
            } => {
                let pair = expand_supercritical(n, f_log, q, p0_over_r0, &m);
                let n_val = m.lit(n as f64);
                let t = (-(f_log.clone() + n_val.clone() * m.ln())).exp();
                let r_scale = n_val.clone() * &m * &t * &t;
                let p_scale = n_val.clone() * &n_val * &m * &m * &t * &t;
                (pair, r_scale, p_scale)
            }
            RegimeConstants::Subcritical { r_star, k } => {
                let pair = expand_subcritical(n, r_star, k, &m);
                let g = m.clone() * (one.clone() - r_star);
                let g2n = g.powi(2 * n as i64);
                let k2 = k.clone() * k;
                let r2 = r_star.clone() * r_star;
                let one_minus_g = one.clone() - &g;
                let r_scale = (one.clone() + m.clone() * r_star / (one.clone() - g.clone() * &g))
                    * &k2
                    * &r2
                    * r_star
                    * &g2n
                    / (one_minus_g.clone() * &one_minus_g);
                let p_scale = (one.clone() + m.clone() * r_star / &one_minus_g) * &k2 * &r2 * &g2n
                    / ((m.clone() - &one) * &one_minus_g);
                (pair, r_scale, p_scale)
            }
            RegimeConstants::Critical => {
                if n < 2 {
                    continue;
                }
                let pair = expand_critical(n, &m)?;
                let n_val = m.lit(n as f64);
                let log_n = n_val.ln();
                let n2 = n_val.clone() * &n_val;
                let n3 = n2.clone() * &n_val;
                let m1 = m.clone() - &one;
                let c2 = m.lit(4.0) * (m.clone() + &one) / (m.lit(3.0) * &m * &m1);
                let c3 = m.lit(8.0) * (m.clone() + &one) / (m.lit(3.0) * &m1 * &m1 * &m1);
                let r_scale = c2 * &log_n / &n2;
                let p_scale = c3 * &log_n / &n3;
                (pair, r_scale, p_scale)
            }
        };
        let exact_r = rec.r().clone();
        let res_r = (exact_r.clone() - &pair.r_pred).abs();
        r_rows.push(ExpansionValue {
            n,
            predicted: pair.r_pred.to_f64(),
            exact: exact_r.to_f64(),
            abs_residual: res_r.to_f64(),
            normalized_residual: (res_r / r_scale.abs()).to_f64(),
        });
        let exact_p = rec.p().clone();
        let res_p = (exact_p.clone() - &pair.p_pred).abs();
        p_rows.push(ExpansionValue {
            n,
            predicted: pair.p_pred.to_f64(),
            exact: exact_p.to_f64(),
            abs_residual: res_p.to_f64(),
            normalized_residual: (res_p / p_scale.abs()).to_f64(),
        });
    }
    Ok((r_rows, p_rows))
}

/// Which limit a finite-n estimator sequence targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CoefficientTarget {
    /// n v_n -> 2/m (critical).
    CriticalNv,
    /// n^3 (v_n - v_{n+1} - (m/2) v_n v_{n+1}) -> 4(m+1)/(3m(m-1)) (critical).
    CriticalSecondOrder,
    /// (E(m^{Y_n}) - 1)(m-1) n -> 1 (critical).
    CriticalGenFunc,
    /// p_n/(n r_n): variant candidate m, telescoping-derived candidate 1
    /// (supercritical).
    SupercriticalPCoeff,
    /// (r_n - r_*)/gamma_*^n -> K r_*^2/(1 - gamma_*) (subcritical); needs
    /// (r_star, k) context.
    SubcriticalFirstOrder,
}

impl CoefficientTarget {
    pub fn name(&self) -> &'static str {
        match self {
            CoefficientTarget::CriticalNv => "critical n*v_n",
            CoefficientTarget::CriticalSecondOrder => "critical second-order",
            CoefficientTarget::CriticalGenFunc => "critical generating function",
            CoefficientTarget::SupercriticalPCoeff => "supercritical p-coefficient",
            CoefficientTarget::SubcriticalFirstOrder => "subcritical first-order ratio",
        }
    }

    /// Minimum trajectory length (records) the estimator needs.
    pub fn min_len(&self) -> usize {
        match self {
            CoefficientTarget::CriticalNv => 8,
            CoefficientTarget::CriticalSecondOrder => 9,
            CoefficientTarget::CriticalGenFunc => 8,
            CoefficientTarget::SupercriticalPCoeff => 8,
            CoefficientTarget::SubcriticalFirstOrder => 8,
        }
    }
}

/// Raw estimator sequence plus Aitken-accelerated values and the final
/// extrapolation.
#[derive(Debug, Clone)]
pub struct CoefficientEstimate<R: Real> {
    pub target: CoefficientTarget,
    /// (n, raw estimator value)
    pub raw: Vec<(u64, R)>,
    /// Aitken-accelerated sequence (defined from the third raw value on).
    pub accelerated: Vec<(u64, R)>,
    pub extrapolated: R,
}

/// Aitken delta-squared acceleration with a divergence guard: entries where
/// the second difference vanishes fall back to the raw value. Exact on
/// sequences with a geometrically decaying error term.
fn aitken<R: Real>(xs: &[(u64, R)]) -> Vec<(u64, R)> {
    let mut out = Vec::new();
    for k in 2..xs.len() {
        let x0 = &xs[k - 2].1;
        let x1 = &xs[k - 1].1;
        let x2 = &xs[k].1;
        let d1 = x2.clone() - x1;
        let d0 = x1.clone() - x0;
        let dd = d1.clone() - &d0;
        let val = if dd.abs() > dd.lit(0.0) {
            let cand = x2.clone() - d1.clone() * &d1 / dd;
            if cand.is_finite() {
                cand
            } else {
                x2.clone()
            }
        } else {
            x2.clone()
        };
        out.push((xs[k].0, val));
    }
    out
}

/// One Richardson step with exponent 1: y = (n2 x2 - n1 x1)/(n2 - n1)
/// cancels a c/n error term exactly and turns a c log n / n term into
/// O(1/n). Used for the polynomially converging estimator targets.
fn richardson1<R: Real>(xs: &[(u64, R)]) -> Vec<(u64, R)> {
    let mut out = Vec::new();
    for k in 1..xs.len() {
        let (n1, x1) = &xs[k - 1];
        let (n2, x2) = &xs[k];
        if n2 == n1 {
            continue;
        }
        let n1v = x1.lit(*n1 as f64);
        let n2v = x1.lit(*n2 as f64);
        let y = (n2v.clone() * x2 - n1v.clone() * x1) / (n2v - n1v);
        out.push((*n2, y));
    }
    out
}

/// Build the estimator sequence for `target` on an exact trajectory.
/// Subcritical targets take the converged (r_*, K) as context.
pub fn estimate_coefficients<R: Real>(
    traj: &Trajectory<R>,
    target: CoefficientTarget,
    subcritical_context: Option<(&R, &R)>,
) -> Result<CoefficientEstimate<R>> {
    if traj.len() < target.min_len() {
        return Err(DrError::InsufficientLength {
            target: target.name(),
            min: target.min_len(),
            got: traj.len(),
        });
    }
    let m = traj.m().clone();
    let one = m.lit(1.0);
    let mut raw = Vec::new();
    match target {
        CoefficientTarget::CriticalNv => {
            for rec in traj.records.iter().skip(1) {
                let n_val = m.lit(rec.n as f64);
                raw.push((rec.n, n_val * rec.v(&m)));
            }
        }
        CoefficientTarget::CriticalSecondOrder => {
            for w in traj.records.windows(2).skip(1) {
                let n = w[0].n;
                let n_val = m.lit(n as f64);
                let v0 = w[0].v(&m);
                let v1 = w[1].v(&m);
                let half_m = m.clone() / m.lit(2.0);
                let est = n_val.clone() * &n_val * &n_val * (v0.clone() - &v1 - half_m * &v0 * &v1);
                raw.push((n, est));
            }
        }
        CoefficientTarget::CriticalGenFunc => {
            // (E(m^Y) - 1)(m-1) n with E(m^Y) - 1 = (m-1) w / (m v), the
            // cancellation-free form of the generating function at s = m.
            for rec in traj.records.iter().skip(1) {
                let v = rec.v(&m);
                if v <= v.lit(0.0) {
                    continue;
                }
                let n_val = m.lit(rec.n as f64);
                let m1 = m.clone() - &one;
                let e_minus_1 = m1.clone() * rec.survival() / (m.clone() * &v);
                raw.push((rec.n, e_minus_1 * &m1 * &n_val));
            }
        }
        CoefficientTarget::SupercriticalPCoeff => {
            for rec in traj.records.iter().skip(1) {
                let n_val = m.lit(rec.n as f64);
                raw.push((rec.n, rec.p_over_r() / n_val));
            }
        }
        CoefficientTarget::SubcriticalFirstOrder => {
            let (r_star, _k) = subcritical_context.ok_or(DrError::InvalidParameter {
                name: "subcritical_context",
                value: f64::NAN,
                requirement: "SubcriticalFirstOrder needs (r_star, K)",
            })?;
            let g = m.clone() * (one.clone() - r_star);
            for rec in traj.records.iter().skip(1) {
                let gn = g.powi(rec.n as i64);
                raw.push((rec.n, (rec.r().clone() - r_star) / gn));
            }
        }
    }
    if raw.len() < 3 {
        return Err(DrError::InsufficientLength {
            target: target.name(),
            min: target.min_len(),
            got: raw.len(),
        });
    }
    // Geometric error terms respond to Aitken; the polynomially biased
    // targets (errors c/n or c log n/n) respond to iterated Richardson.
    let accelerated = match target {
        CoefficientTarget::SubcriticalFirstOrder => aitken(&raw),
        _ => {
            let once = richardson1(&raw);
            if once.len() >= 2 {
                richardson1(&once)
            } else {
                once
            }
        }
    };
    let extrapolated = accelerated
        .last()
        .map(|(_, v)| v.clone())
        .unwrap_or_else(|| raw.last().unwrap().1.clone());
    Ok(CoefficientEstimate {
        target,
        raw,
        accelerated,
        extrapolated,
    })
}
