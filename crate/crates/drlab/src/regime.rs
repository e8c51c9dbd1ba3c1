//! Regime classification, limit constants and the critical manifold.
//!
//! Every trajectory converges to limits (r_*, p_*) which are either
//! (0, 0) (supercritical) or (r_*, 1) with r_* >= 1 - 1/m (subcritical;
//! r_* = 1 - 1/m is the critical case). The open interval (0, 1 - 1/m) is
//! forbidden for r_*, so a trajectory that crosses below 1 - 1/m - delta is
//! certainly supercritical. Subcritical certainty at finite time uses either
//! the convergence criteria below or a self-consistent contraction
//! certificate (see `subcritical_certificate`).

use rayon::prelude::*;
use serde::Serialize;

use crate::config::ModelConfig;
use crate::error::{DrError, Result};
use crate::law::GeometricTypeLaw;
use crate::real::Real;
use crate::recursion::{step_fast, step_state, FastState, State, StepCtx, Trajectory};

/// Relative step-size threshold of the subcritical convergence rule.
pub const SUBCRITICAL_REL_STEP: f64 = 1e-15;
/// Survival-mass threshold of the subcritical convergence rule.
pub const SUBCRITICAL_SURVIVAL: f64 = 1e-12;
/// Tail-truncation threshold for the limit constants.
pub const CONSTANT_TAIL_TOL: f64 = 1e-17;
/// Default half-width of the undecided band around 1 - 1/m.
pub const DEFAULT_DELTA: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    Supercritical,
    Subcritical,
    NearCriticalUndetermined,
}

impl Regime {
    /// Single-character code used by phase-scan output: S, U, C?.
    pub fn code(&self) -> &'static str {
        match self {
            Regime::Supercritical => "S",
            Regime::Subcritical => "U",
            Regime::NearCriticalUndetermined => "C?",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::Supercritical => "Supercritical",
            Regime::Subcritical => "Subcritical",
            Regime::NearCriticalUndetermined => "NearCriticalUndetermined",
        };
        f.write_str(s)
    }
}

/// A positive quantity together with its natural log, so values that
/// underflow the scalar type remain meaningful.
#[derive(Debug, Clone)]
pub struct LogValue<R: Real> {
    pub value: R,
    pub log: R,
}

impl<R: Real> LogValue<R> {
    pub fn from_log(log: R) -> Self {
        LogValue {
            value: log.exp(),
            log,
        }
    }
}

/// Partial sum of sum p_i with a geometric tail estimate.
#[derive(Debug, Clone)]
pub struct QEstimate<R: Real> {
    pub value: R,
    /// Estimate of the omitted tail, p_last / (m - 1).
    pub tail_bound: R,
}

/// Free energy computed through both product forms.
#[derive(Debug, Clone)]
pub struct FreeEnergy<R: Real> {
    /// Second form: r_0^-1 (1-p_0) prod_{i>=1} (1-r_i).
    pub value: LogValue<R>,
    /// First form: r_0^-1 prod_{i>=0} [1 - (m-1) p_i / m], as a log.
    pub form1_log: R,
    /// Relative disagreement of the two forms.
    pub forms_rel_diff: f64,
}

#[derive(Debug, Clone)]
pub struct Diagnostics<R: Real> {
    pub final_r: R,
    pub final_survival: R,
    /// |r_{n} - r_{n-1}| / r_{n-1} at exit, when at least one step was taken.
    pub last_rel_step: Option<f64>,
    /// Step index at which r crossed below 1 - 1/m - delta, if it did.
    pub crossed_below_at: Option<u64>,
}

/// Classification result with the limit constants of the detected regime.
#[derive(Debug, Clone)]
pub struct RegimeReport<R: Real> {
    pub regime: Regime,
    pub r_star: Option<R>,
    pub p_star: Option<R>,
    /// gamma_* = m (1 - r_*), subcritical only.
    pub gamma_star: Option<R>,
    /// F_infinity; positive in the supercritical regime, zero otherwise.
    pub free_energy: Option<FreeEnergy<R>>,
    /// Subcritical amplitude constant.
    pub k_const: Option<R>,
    /// Supercritical summed-mass constant Q = sum p_i.
    pub q_const: Option<QEstimate<R>>,
    pub iterations_used: u64,
    pub diagnostics: Diagnostics<R>,
}

fn validate_delta(m: f64, delta: f64) -> Result<()> {
    let crit = 1.0 - 1.0 / m;
    if !(delta > 0.0 && delta < crit / 10.0) {
        return Err(DrError::InvalidParameter {
            name: "delta",
            value: delta,
            requirement: "0 < delta < (1 - 1/m)/10",
        });
    }
    Ok(())
}

/// The self-consistent subcritical certificate: at a state with
/// v = r - (1 - 1/m) > 0 and survival mass w, if
///
///   4 (m-1) w <= m v^2
///
/// then the total future decrease of r is at most v/2, so r_* >= 1 - 1/m + v/2
/// and the trajectory is certainly subcritical. (Each step decreases r by
/// (m-1) r_{n+1} w_n <= (m-1) w_n and contracts w by at least
/// m (1 - r) <= 1 - m v / 2 while r stays above 1 - 1/m + v/2; the geometric
/// series then sums to at most v/2, closing the induction.)
pub fn subcritical_certificate<R: Real>(s: &FastState<R>, m: &R, crit: &R) -> bool {
    let v = s.r.clone() - crit;
    if v <= v.lit(0.0) {
        return false;
    }
    let four = v.lit(4.0);
    let one = v.lit(1.0);
    four * (m.clone() - one) * &s.w <= m.clone() * &v * &v
}

/// Classify a starting law by iterating the recursion.
///
/// Supercritical is declared as soon as r_n <= 1 - 1/m - delta (r_n
/// decreases strictly and no limit can lie in (0, 1 - 1/m)). Subcritical is
/// declared when r_n > 1 - 1/m + delta, the relative step falls below
/// 1e-15 and the survival mass below 1e-12. If neither fires within
/// `budget` steps the honest outcome is NearCriticalUndetermined.
pub fn classify<R: Real>(
    law0: &GeometricTypeLaw<R>,
    config: &ModelConfig,
    budget: u64,
    delta: f64,
) -> Result<RegimeReport<R>> {
    if budget < 1 {
        return Err(DrError::InvalidParameter {
            name: "budget",
            value: budget as f64,
            requirement: "budget >= 1",
        });
    }
    validate_delta(config.m, delta)?;

    let ctx: StepCtx<R> = StepCtx::new(law0.r().lit(config.m));
    let m = ctx.m.clone();
    let one = ctx.one.clone();
    let crit = ctx.critical_r();
    let delta_r = m.lit(delta);
    let lower = crit.clone() - &delta_r;
    let upper = crit.clone() + &delta_r;
    let rel_step = m.lit(SUBCRITICAL_REL_STEP);
    let surv_tol = m.lit(SUBCRITICAL_SURVIVAL);

    let mut s = State::from_law(law0);
    let mut q_sum = s.p.clone();
    let mut prev_r: Option<R> = None;
    let mut r1: Option<R> = None;
    let mut crossed_below_at = None;
    let mut regime = Regime::NearCriticalUndetermined;
    let mut n_used = 0u64;

    for n in 0..=budget {
        n_used = n;
        if s.n == 1 && r1.is_none() {
            r1 = Some(s.r.clone());
        }
        if s.r <= lower {
            regime = Regime::Supercritical;
            crossed_below_at = Some(n);
            break;
        }
        if let Some(pr) = &prev_r {
            let step_ok = (pr.clone() - &s.r).abs() < rel_step.clone() * pr;
            if s.r > upper && step_ok && s.w < surv_tol {
                regime = Regime::Subcritical;
                break;
            }
        }
        if n == budget {
            break;
        }
        prev_r = Some(s.r.clone());
        s = step_state(&s, &ctx);
        q_sum = q_sum + &s.p;
        if s.n == 1 {
            r1 = Some(s.r.clone());
        }
    }

    let last_rel_step = prev_r
        .as_ref()
        .map(|pr| ((pr.clone() - &s.r).abs() / pr).to_f64());
    let mut report = RegimeReport {
        regime,
        r_star: None,
        p_star: None,
        gamma_star: None,
        free_energy: None,
        k_const: None,
        q_const: None,
        iterations_used: n_used,
        diagnostics: Diagnostics {
            final_r: s.r.clone(),
            final_survival: s.w.clone(),
            last_rel_step,
            crossed_below_at,
        },
    };

    match regime {
        Regime::Supercritical => {
            let zero = m.lit(0.0);
            report.r_star = Some(zero.clone());
            report.p_star = Some(zero);
            let (fe, q) = supercritical_constants(law0, &ctx, s, q_sum, config.max_steps);
            report.free_energy = Some(fe);
            report.q_const = Some(q);
        }
        Regime::Subcritical => {
            let r1 = r1.expect("a subcritical verdict needs at least one step");
            let (r_star, k) =
                subcritical_constants(&ctx, s, law0.r().clone(), r1, config.max_steps);
            report.p_star = Some(m.lit(1.0));
            report.gamma_star = Some(m.clone() * (one - &r_star));
            report.r_star = Some(r_star);
            report.k_const = Some(k);
            report.free_energy = Some(FreeEnergy {
                value: LogValue {
                    value: m.lit(0.0),
                    log: m.lit(f64::NEG_INFINITY),
                },
                form1_log: m.lit(f64::NEG_INFINITY),
                forms_rel_diff: 0.0,
            });
        }
        Regime::NearCriticalUndetermined => {}
    }

    Ok(report)
}

/// Continue a supercritical run until the constant tails are below
/// `CONSTANT_TAIL_TOL`, then read off F (both forms) and Q.
fn supercritical_constants<R: Real>(
    law0: &GeometricTypeLaw<R>,
    ctx: &StepCtx<R>,
    mut s: State<R>,
    mut q_sum: R,
    max_extra: u64,
) -> (FreeEnergy<R>, QEstimate<R>) {
    let m = &ctx.m;
    let one = ctx.one.clone();
    // Tail rules: the F product stops once r_i m/(m-1) < tol, the Q sum once
    // p_i < tol (1 - 1/m); both reduce to the same threshold value.
    let stop = m.lit(CONSTANT_TAIL_TOL) * (m.clone() - &one) / m;
    let mut extra = 0u64;
    while (s.r >= stop || s.p >= stop) && extra < max_extra {
        s = step_state(&s, ctx);
        q_sum = q_sum + &s.p;
        extra += 1;
    }
    let log_lead = law0.survival().ln() - law0.r().ln();
    let form2_log = log_lead + &s.cum_log_one_minus_r;
    let form1_log = s.cum_log_offspring_factor.clone() - law0.r().ln();
    let rel = ((form2_log.clone() - &form1_log).exp() - one)
        .to_f64()
        .abs();
    let fe = FreeEnergy {
        value: LogValue::from_log(form2_log),
        form1_log,
        forms_rel_diff: rel,
    };
    let q = QEstimate {
        tail_bound: s.p.clone() / (m.clone() - m.lit(1.0)),
        value: q_sum,
    };
    (fe, q)
}

/// Continue a subcritical run until the step size reaches the precision
/// floor, then estimate r_* by Aitken extrapolation and K through the
/// log-product.
fn subcritical_constants<R: Real>(
    ctx: &StepCtx<R>,
    mut s: State<R>,
    r0: R,
    r1: R,
    max_extra: u64,
) -> (R, R) {
    let m = &ctx.m;
    let eps = s.r.epsilon();
    let floor = s.r.lit((eps * 32.0).max(1e-300));
    let mut history: Vec<R> = Vec::with_capacity(3);
    let mut extra = 0u64;
    loop {
        let prev = s.r.clone();
        let next = step_state(&s, ctx);
        let dr = (prev.clone() - &next.r).abs();
        if history.len() == 2 {
            history.remove(0);
        }
        history.push(prev.clone());
        s = next;
        extra += 1;
        if (extra >= 3 && dr < floor.clone() * &prev) || extra >= max_extra {
            break;
        }
    }
    // Aitken: r_* = r_N - (dr_N)^2 / (dr_N - dr_{N-1})
    let r_n = s.r.clone();
    let r_star = if history.len() == 2 {
        let ra = &history[1];
        let rb = &history[0];
        let d1 = r_n.clone() - ra;
        let d0 = ra.clone() - rb;
        let dd = d1.clone() - &d0;
        if dd.abs() > dd.lit(0.0) {
            let cand = r_n.clone() - d1.clone() * &d1 / dd;
            if cand > cand.lit(0.0) && cand < cand.lit(1.0) {
                cand
            } else {
                r_n.clone()
            }
        } else {
            r_n.clone()
        }
    } else {
        r_n.clone()
    };
    // K = (r_0 - r_1)/(r_0 r_1) * prod_{i>=1} (1-r_i)/(1-r_*); the product
    // log is cum_log_one_minus_r(N) - N ln(1-r_*). Terms past the
    // convergence floor contribute below the working precision.
    let n_val = m.lit(s.n as f64);
    let log_one_minus_rstar = (-r_star.clone()).ln_1p();
    let lead = (r0.clone() - &r1) / (r0 * &r1);
    let k = lead * (s.cum_log_one_minus_r.clone() - n_val * log_one_minus_rstar).exp();
    (r_star, k)
}

/// Estimate r_* from a converged subcritical trajectory by Aitken
/// extrapolation of its last three records.
pub fn r_star_from_trajectory<R: Real>(traj: &Trajectory<R>) -> R {
    let len = traj.len();
    let r_n = traj.record(len - 1).r().clone();
    if len < 3 {
        return r_n;
    }
    let r1 = traj.record(len - 2).r().clone();
    let r2 = traj.record(len - 3).r().clone();
    let d1 = r_n.clone() - &r1;
    let d0 = r1.clone() - &r2;
    let dd = d1.clone() - &d0;
    if dd.abs() > dd.lit(0.0) {
        let cand = r_n.clone() - d1.clone() * &d1 / dd;
        if cand > cand.lit(0.0) && cand < cand.lit(1.0) {
            return cand;
        }
    }
    r_n
}

/// F_infinity of a supercritical trajectory, through both product forms of
/// the limit. The trajectory is continued internally (without storing
/// records) until the tail bound r_i m/(m-1) drops below 1e-17.
pub fn free_energy<R: Real>(traj: &Trajectory<R>) -> Result<FreeEnergy<R>> {
    let ctx = StepCtx::new(traj.m().clone());
    let m = ctx.m.clone();
    let one = ctx.one.clone();
    let crit = ctx.critical_r();
    // Certify supercritical: some stored or continued iterate must cross
    // strictly below 1 - 1/m. A firing contraction certificate proves the
    // opposite regime and rejects immediately.
    let mut s = traj.final_state();
    if !(s.r < crit) {
        let mut guard = 0u64;
        while !(s.r < crit) && guard < traj.config.max_steps {
            let fast = FastState {
                n: s.n,
                r: s.r.clone(),
                p: s.p.clone(),
                w: s.w.clone(),
            };
            if subcritical_certificate(&fast, &m, &crit) {
                return Err(DrError::RegimeMismatch {
                    op: "free_energy",
                    expected: "supercritical",
                    actual: format!("subcritical certificate fired at step {}", s.n),
                });
            }
            s = step_state(&s, &ctx);
            guard += 1;
        }
        if !(s.r < crit) {
            return Err(DrError::RegimeMismatch {
                op: "free_energy",
                expected: "supercritical",
                actual: format!("r stayed above 1-1/m for {guard} extra steps"),
            });
        }
    }
    let law0 = &traj.record(0).law;
    let stop = m.lit(CONSTANT_TAIL_TOL) * (m.clone() - &one) / &m;
    let mut extra = 0u64;
    while (s.r >= stop || s.p >= stop) && extra < traj.config.max_steps {
        s = step_state(&s, &ctx);
        extra += 1;
    }
    let log_lead = law0.survival().ln() - law0.r().ln();
    let form2_log = log_lead + &s.cum_log_one_minus_r;
    let form1_log = s.cum_log_offspring_factor.clone() - law0.r().ln();
    let rel = ((form2_log.clone() - &form1_log).exp() - one)
        .to_f64()
        .abs();
    Ok(FreeEnergy {
        value: LogValue::from_log(form2_log),
        form1_log,
        forms_rel_diff: rel,
    })
}

/// Q = sum_{i>=0} p_i of a supercritical trajectory, truncated when
/// p_i < 1e-17 (1 - 1/m), with the geometric tail estimate reported.
pub fn constant_q<R: Real>(traj: &Trajectory<R>) -> Result<QEstimate<R>> {
    let ctx = StepCtx::new(traj.m().clone());
    let m = ctx.m.clone();
    let one = ctx.one.clone();
    let crit = ctx.critical_r();
    let mut crossed = traj.records.iter().any(|rec| *rec.r() < crit);
    let mut sum = m.lit(0.0);
    for rec in &traj.records {
        sum = sum + rec.p();
    }
    let mut s = traj.final_state();
    let stop = m.lit(CONSTANT_TAIL_TOL) * &crit;
    let mut extra = 0u64;
    while (!crossed || s.p >= stop) && extra < traj.config.max_steps {
        if !crossed {
            let fast = FastState {
                n: s.n,
                r: s.r.clone(),
                p: s.p.clone(),
                w: s.w.clone(),
            };
            if subcritical_certificate(&fast, &m, &crit) {
                return Err(DrError::RegimeMismatch {
                    op: "constant_q",
                    expected: "supercritical",
                    actual: format!("subcritical certificate fired at step {}", s.n),
                });
            }
        }
        s = step_state(&s, &ctx);
        sum = sum + &s.p;
        if s.r < crit {
            crossed = true;
        }
        extra += 1;
    }
    if !crossed {
        return Err(DrError::RegimeMismatch {
            op: "constant_q",
            expected: "supercritical",
            actual: "r never crossed below 1-1/m".into(),
        });
    }
    Ok(QEstimate {
        tail_bound: s.p.clone() / (m.clone() - one),
        value: sum,
    })
}

/// K = (r_0 - r_1)/(r_0 r_1) prod_{i>=1} (1-r_i)/(1-r_*) of a subcritical
/// trajectory with converged r_*. Accumulated in the log domain; the product
/// is truncated once |r_i - r_*| < 1e-16 (1 - r_*) (scaled to the working
/// precision when finer).
pub fn constant_k<R: Real>(traj: &Trajectory<R>, r_star: &R) -> Result<R> {
    let ctx = StepCtx::new(traj.m().clone());
    let m = ctx.m.clone();
    let one = ctx.one.clone();
    let crit = ctx.critical_r();
    if !(r_star > &crit) {
        return Err(DrError::RegimeMismatch {
            op: "constant_k",
            expected: "subcritical (r_* > 1 - 1/m)",
            actual: format!("r_* = {:?}", r_star.to_f64()),
        });
    }
    // Truncation once |r_i - r_*| < 1e-16 (1 - r_*) (scaled down at higher
    // working precision), floored at a few ulps of r_* so the loop always
    // terminates once the iteration hits its representable fixed point.
    let eps = r_star.epsilon();
    let cut_rel = if eps * 16.0 < 1e-16 {
        eps * 16.0
    } else {
        1e-16
    };
    let scaled = r_star.lit(cut_rel) * (one.clone() - r_star);
    let ulp_floor = r_star.lit(4.0 * eps) * r_star;
    let stop_gap = if scaled > ulp_floor {
        scaled
    } else {
        ulp_floor
    };
    let log_one_minus_rstar = (-r_star.clone()).ln_1p();

    if traj.len() < 2 {
        return Err(DrError::InsufficientLength {
            target: "constant_k",
            min: 2,
            got: traj.len(),
        });
    }
    let r0 = traj.record(0).r().clone();
    let r1 = traj.record(1).r().clone();
    let lead = (r0.clone() - &r1) / (r0.clone() * &r1);

    // sum over i >= 1 of [ln(1-r_i) - ln(1-r_*)]
    let mut log_prod = m.lit(0.0);
    let mut reached = false;
    for rec in traj.records.iter().skip(1) {
        let term = (-rec.r().clone()).ln_1p() - &log_one_minus_rstar;
        log_prod = log_prod + term;
        if (rec.r().clone() - r_star).abs() < stop_gap {
            reached = true;
            break;
        }
    }
    if !reached {
        // Continue the run internally until the truncation point.
        let mut s = traj.final_state();
        let mut extra = 0u64;
        loop {
            s = step_state(&s, &ctx);
            let term = (-s.r.clone()).ln_1p() - &log_one_minus_rstar;
            log_prod = log_prod + term;
            let gap = (s.r.clone() - r_star).abs();
            extra += 1;
            if gap < stop_gap {
                break;
            }
            if extra >= traj.config.max_steps {
                return Err(DrError::RegimeMismatch {
                    op: "constant_k",
                    expected: "converged subcritical trajectory",
                    actual: format!(
                        "gap to r_* still {:e} after {} extra steps",
                        gap.to_f64(),
                        extra
                    ),
                });
            }
        }
    }
    Ok(lead * log_prod.exp())
}

/// Outcome of a single bisection probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ProbeClass {
    Super,
    Sub,
    Undecided,
}

/// Classify one probe with a hard step budget, using the escape rule, the
/// pinned convergence rule and the contraction certificate.
fn probe_classify<R: Real>(r0: &R, p0: &R, m: &R, delta: f64, budget: u64) -> (ProbeClass, u64) {
    let ctx = StepCtx::new(m.clone());
    let one = ctx.one.clone();
    let crit = ctx.critical_r();
    let lower = crit.clone() - m.lit(delta);
    let upper = crit.clone() + m.lit(delta);
    let rel_step = m.lit(SUBCRITICAL_REL_STEP);
    let surv_tol = m.lit(SUBCRITICAL_SURVIVAL);
    // inlined certificate constants: 4(m-1) w <= m v^2
    let four_m1 = m.lit(4.0) * (m.clone() - &one);

    let mut s = FastState {
        n: 0,
        r: r0.clone(),
        p: p0.clone(),
        w: one.clone() - p0,
    };
    let mut prev_r: Option<R> = None;
    for n in 0..=budget {
        if s.r <= lower {
            return (ProbeClass::Super, n);
        }
        if s.r > upper {
            let v = s.r.clone() - &crit;
            if four_m1.clone() * &s.w <= m.clone() * &v * &v {
                return (ProbeClass::Sub, n);
            }
            if let Some(pr) = &prev_r {
                if (pr.clone() - &s.r).abs() < rel_step.clone() * pr && s.w < surv_tol {
                    return (ProbeClass::Sub, n);
                }
            }
        }
        if n == budget {
            break;
        }
        prev_r = Some(s.r.clone());
        s = step_fast(&s, &ctx);
    }
    (ProbeClass::Undecided, budget)
}

/// Tuning knobs of the bisection locator.
#[derive(Debug, Clone)]
pub struct LocateParams {
    pub p_lo: f64,
    pub p_hi: f64,
    pub delta: f64,
    /// Budget for the first probes.
    pub initial_probe_budget: u64,
    /// Hard cap on the per-probe budget; decision times grow like
    /// c/sqrt(distance to the manifold), so this cap limits the achievable
    /// bracket width to about (c/cap)^2.
    pub max_probe_budget: u64,
}

impl Default for LocateParams {
    fn default() -> Self {
        LocateParams {
            p_lo: 0.05,
            p_hi: 0.95,
            delta: DEFAULT_DELTA,
            initial_probe_budget: 20_000,
            max_probe_budget: 4_000_000,
        }
    }
}

/// Result of locating the critical p0 for a fixed r0 by bisection.
#[derive(Debug, Clone)]
pub struct CriticalLocateResult<R: Real> {
    pub r0: R,
    /// Midpoint of the final bracket.
    pub p0_critical: R,
    /// Sharpest available point estimate: when bisection stopped on an
    /// undecidable probe, that probe point lies within ~(2.4/budget)^2 of
    /// the manifold (a probe at distance d decides within ~2.4/sqrt(d)
    /// steps), which is tighter than the certified bracket. Falls back to
    /// the bracket midpoint when the tolerance was reached normally.
    pub p0_best: R,
    pub bracket_lo: R,
    pub bracket_hi: R,
    pub bracket_width: f64,
    pub requested_tol: f64,
    pub tol_achieved: bool,
    pub monotonicity_violations: u64,
    pub probes: u64,
    pub total_steps: u64,
    /// Largest per-probe budget actually used.
    pub final_probe_budget: u64,
}

/// Best-effort bisection for the critical p0. Returns the tightest bracket
/// the probe budget allows, with `tol_achieved` marking whether the
/// requested tolerance was reached. Endpoint classifications always differ
/// (supercritical below, subcritical above).
pub fn critical_locate_best_effort<R: Real>(
    r0: &R,
    config: &ModelConfig,
    tol: f64,
    params: &LocateParams,
) -> Result<CriticalLocateResult<R>> {
    let m = r0.lit(config.m);
    let one = m.lit(1.0);
    let crit = one.clone() - one.clone() / &m;
    if !(r0 > &crit) {
        return Err(DrError::InvalidParameter {
            name: "r0",
            value: r0.to_f64(),
            requirement: "r0 > 1 - 1/m (otherwise every p0 is supercritical)",
        });
    }
    let resolution = 100.0 * r0.epsilon();
    if tol < resolution {
        return Err(DrError::PrecisionInsufficient { tol, resolution });
    }
    validate_delta(config.m, params.delta)?;

    let mut total_steps = 0u64;
    let mut probes = 0u64;

    let mut classify_at = |p: &R, budget: u64| -> (ProbeClass, u64) {
        let (c, n) = probe_classify(r0, p, &m, params.delta, budget);
        probes += 1;
        total_steps += n;
        (c, n)
    };

    // Endpoints. Grow the budget if a boundary point is slow to decide.
    let mut lo = m.lit(params.p_lo);
    let mut hi = m.lit(params.p_hi);
    let mut budget = params.initial_probe_budget;
    let lo_class = loop {
        let (c, _) = classify_at(&lo, budget);
        if c != ProbeClass::Undecided || budget >= params.max_probe_budget {
            break c;
        }
        budget = (budget * 4).min(params.max_probe_budget);
    };
    let hi_class = loop {
        let (c, _) = classify_at(&hi, budget);
        if c != ProbeClass::Undecided || budget >= params.max_probe_budget {
            break c;
        }
        budget = (budget * 4).min(params.max_probe_budget);
    };
    match (lo_class, hi_class) {
        (ProbeClass::Super, ProbeClass::Sub) => {}
        (ProbeClass::Super, ProbeClass::Super) => {
            return Err(DrError::BracketNotFound {
                class: "supercritical",
            })
        }
        (ProbeClass::Sub, ProbeClass::Sub) | (ProbeClass::Sub, ProbeClass::Super) => {
            return Err(DrError::BracketNotFound {
                class: "subcritical",
            })
        }
        _ => return Err(DrError::BracketNotFound { class: "undecided" }),
    }

    // Bisection with ordering bookkeeping: any supercritical probe above a
    // subcritical probe is a monotonicity violation.
    let mut max_super = lo.clone();
    let mut min_sub = hi.clone();
    let mut violations = 0u64;
    let two = m.lit(2.0);
    let mut width = (hi.clone() - &lo).to_f64();
    let mut final_budget = budget;
    let mut undecidable: Option<R> = None;

    while width > tol {
        let mid = (lo.clone() + &hi) / &two;
        if !(mid > lo && mid < hi) {
            // Bracket no longer splittable at this precision.
            break;
        }
        let mut decided = None;
        loop {
            let (c, _) = classify_at(&mid, budget);
            if c != ProbeClass::Undecided {
                decided = Some(c);
                break;
            }
            if budget >= params.max_probe_budget {
                break;
            }
            budget = (budget * 4).min(params.max_probe_budget);
        }
        final_budget = final_budget.max(budget);
        match decided {
            Some(ProbeClass::Super) => {
                if mid > min_sub {
                    violations += 1;
                }
                if mid > max_super {
                    max_super = mid.clone();
                }
                lo = mid;
            }
            Some(ProbeClass::Sub) => {
                if mid < max_super {
                    violations += 1;
                }
                if mid < min_sub {
                    min_sub = mid.clone();
                }
                hi = mid;
            }
            _ => {
                // Undecidable at the full budget: the probe sits within
                // ~(2.4/budget)^2 of the manifold. Keep the last certain
                // bracket and this point estimate.
                undecidable = Some(mid);
                break;
            }
        }
        width = (hi.clone() - &lo).to_f64();
    }

    let p0_critical = (lo.clone() + &hi) / &two;
    let p0_best = undecidable.unwrap_or_else(|| p0_critical.clone());
    Ok(CriticalLocateResult {
        r0: r0.clone(),
        p0_critical,
        p0_best,
        bracket_lo: lo,
        bracket_hi: hi,
        bracket_width: width,
        requested_tol: tol,
        tol_achieved: width <= tol,
        monotonicity_violations: violations,
        probes,
        total_steps,
        final_probe_budget: final_budget,
    })
}

/// Strict locator: errors if the requested tolerance cannot be met within
/// the probe budget.
pub fn critical_locate<R: Real>(
    r0: &R,
    config: &ModelConfig,
    tol: f64,
    params: &LocateParams,
) -> Result<CriticalLocateResult<R>> {
    let res = critical_locate_best_effort(r0, config, tol, params)?;
    if !res.tol_achieved {
        return Err(DrError::BracketBudgetExhausted {
            tol,
            achieved_width: res.bracket_width,
            probe_budget: res.final_probe_budget,
        });
    }
    Ok(res)
}

/// One cell of a phase scan.
#[derive(Debug, Clone)]
pub struct PhaseCell<R: Real> {
    pub r0: R,
    pub p0: R,
    pub report: RegimeReport<R>,
}

/// Evenly spaced interior grid points of (min, max): cell centers.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub cells: usize,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        let span = self.max - self.min;
        (0..self.cells)
            .map(|i| self.min + span * (i as f64 + 0.5) / self.cells as f64)
            .collect()
    }
}

pub const PHASE_SCAN_MAX_CELLS: usize = 1_000_000;

/// Independent classification over a grid of initial conditions. Cells are
/// evaluated in parallel; the output is row-major in r0 (outer) then p0.
pub fn phase_scan<R: Real>(
    config: &ModelConfig,
    r0_grid: &GridSpec,
    p0_grid: &GridSpec,
    budget: u64,
    delta: f64,
    proto: &R,
) -> Result<Vec<PhaseCell<R>>> {
    let cells = r0_grid.cells * p0_grid.cells;
    if cells > PHASE_SCAN_MAX_CELLS {
        return Err(DrError::ResourceBudget {
            what: "phase-scan cells",
            requested: cells as u64,
            maximum: PHASE_SCAN_MAX_CELLS as u64,
        });
    }
    if !(r0_grid.min >= 0.0 && r0_grid.max <= 1.0 && p0_grid.min >= 0.0 && p0_grid.max <= 1.0) {
        return Err(DrError::InvalidParameter {
            name: "grid",
            value: f64::NAN,
            requirement: "grids must lie within (0,1)",
        });
    }
    validate_delta(config.m, delta)?;
    let r0s = r0_grid.points();
    let p0s = p0_grid.points();
    let pairs: Vec<(f64, f64)> = r0s
        .iter()
        .flat_map(|&r| p0s.iter().map(move |&p| (r, p)))
        .collect();
    pairs
        .par_iter()
        .map(|&(r0, p0)| {
            let law = GeometricTypeLaw::new(proto.lit(r0), proto.lit(p0))?;
            let report = classify(&law, config, budget, delta)?;
            Ok(PhaseCell {
                r0: proto.lit(r0),
                p0: proto.lit(p0),
                report,
            })
        })
        .collect()
}
