//! The one-step parameter map and trajectory iteration.
//!
//! One step of the model maps (r, p) to
//!
//!   r' = r / A,        A = m - (m-1) p,
//!   p' = 1 - (1 - r')(1 - q'),   q' = r' p / r = p / A,
//!
//! and the state kept here carries the survival mass w = 1-p and the log
//! companions (log r, log p, log(1-p)) updated by exact log-space
//! recurrences, so long supercritical runs survive f64 underflow of r and p
//! and long subcritical runs keep relative accuracy in 1-p.

use crate::config::ModelConfig;
use crate::error::{DrError, Result};
use crate::law::GeometricTypeLaw;
use crate::real::{log_add_exp, Real};

/// Minimal per-step state for hot loops (classification, bisection probes,
/// phase scans). No logarithms are evaluated per step.
#[derive(Debug, Clone)]
pub struct FastState<R: Real> {
    pub n: u64,
    pub r: R,
    pub p: R,
    /// Survival mass 1 - p, tracked independently of p.
    pub w: R,
}

impl<R: Real> FastState<R> {
    pub fn from_law(law: &GeometricTypeLaw<R>) -> Self {
        FastState {
            n: 0,
            r: law.r().clone(),
            p: law.p().clone(),
            w: law.survival().clone(),
        }
    }
}

/// Per-run constants of the one-step map, precomputed once so the hot
/// stepping loops do no constant construction (in extended precision every
/// `lit` and `ln` costs an allocation or worse).
#[derive(Debug, Clone)]
pub struct StepCtx<R: Real> {
    pub m: R,
    pub one: R,
    half: R,
    m_minus_one: R,
    ln_m: R,
}

impl<R: Real> StepCtx<R> {
    pub fn new(m: R) -> Self {
        let one = m.lit(1.0);
        StepCtx {
            one: one.clone(),
            half: m.lit(0.5),
            m_minus_one: m.clone() - &one,
            ln_m: m.ln(),
            m,
        }
    }

    pub fn from_config<RR: Real>(proto: &RR, config: &ModelConfig) -> StepCtx<RR> {
        StepCtx::new(proto.lit(config.m))
    }

    /// 1 - 1/m, the critical value of r.
    pub fn critical_r(&self) -> R {
        self.one.clone() - self.one.clone() / &self.m
    }
}

/// One step of the map on the minimal state.
pub fn step_fast<R: Real>(s: &FastState<R>, ctx: &StepCtx<R>) -> FastState<R> {
    // A = m - (m-1) p = 1 + (m-1) w; the first form is exact in p, the
    // second in w. Use whichever operand is the accurate one: for p <= 1/2
    // use p, otherwise w.
    let a = if s.p <= ctx.half {
        ctx.m.clone() - ctx.m_minus_one.clone() * &s.p
    } else {
        ctx.one.clone() + ctx.m_minus_one.clone() * &s.w
    };
    let inv_a = ctx.one.clone() / &a;
    let r1 = s.r.clone() * &inv_a;
    let q1 = s.p.clone() * &inv_a;
    let one_minus_r1 = ctx.one.clone() - &r1;
    let mut w1 = one_minus_r1.clone() * &ctx.m * &s.w * &inv_a;
    let mut p1 = r1.clone() + q1 * &one_minus_r1;
    // the exact values live in (0,1); the rounded products may overshoot 1
    // by an ulp near saturation
    if w1 > ctx.one {
        w1 = ctx.one.clone();
    }
    if p1 > ctx.one {
        p1 = ctx.one.clone();
    }
    // strictly decreasing in exact arithmetic; equality is reachable in
    // floating point once the gap to the fixed point is below one ulp
    debug_assert!(r1 <= s.r, "r must not increase");
    FastState {
        n: s.n + 1,
        r: r1,
        p: p1,
        w: w1,
    }
}

/// Full per-step state: the minimal state plus log companions, the zero-mass
/// q of the compound-sum law, and running log-products used by the identity
/// suite and the limit constants.
#[derive(Debug, Clone)]
pub struct State<R: Real> {
    pub n: u64,
    pub r: R,
    pub p: R,
    pub w: R,
    pub log_r: R,
    pub log_p: R,
    pub log_w: R,
    /// q_n = r_n p_{n-1} / r_{n-1}, the zero-mass of the compound sum at
    /// step n. None at n = 0.
    pub q: Option<R>,
    /// sum_{i=1}^{n} ln(1 - r_i)
    pub cum_log_one_minus_r: R,
    /// sum_{i=0}^{n-1} ln(1 - (m-1) p_i / m)
    pub cum_log_offspring_factor: R,
    /// sum_{i=1}^{n} (1 - q_i) (exact telescoping of p/r)
    pub cum_one_minus_q: R,
}

impl<R: Real> State<R> {
    pub fn from_law(law: &GeometricTypeLaw<R>) -> Self {
        let r = law.r().clone();
        let p = law.p().clone();
        let w = law.survival().clone();
        let zero = r.lit(0.0);
        State {
            n: 0,
            log_r: r.ln(),
            log_p: p.ln(),
            log_w: w.ln(),
            r,
            p,
            w,
            q: None,
            cum_log_one_minus_r: zero.clone(),
            cum_log_offspring_factor: zero.clone(),
            cum_one_minus_q: zero,
        }
    }

    /// A_n = m - (m-1) p_n for this state's (r, p). Uses the same operand
    /// branch as the stepping code so the stored value matches the divisor
    /// actually applied.
    pub fn a(&self, m: &R) -> R {
        let one = self.r.lit(1.0);
        let half = self.r.lit(0.5);
        if self.p <= half {
            m.clone() - (m.clone() - one) * &self.p
        } else {
            one.clone() + (m.clone() - one) * &self.w
        }
    }

    /// p_n / r_n, from the direct fields when r is representable, otherwise
    /// from the log companions.
    pub fn p_over_r(&self) -> R {
        if self.r > self.r.lit(f64::MIN_POSITIVE) {
            self.p.clone() / &self.r
        } else {
            (self.log_p.clone() - &self.log_r).exp()
        }
    }

    /// E(Y_n) = (1-p)/r via logs (overflow-safe only as far as the scalar
    /// type allows; the log itself is in `mean_log`).
    pub fn mean_log(&self) -> R {
        self.log_w.clone() - &self.log_r
    }
}

/// One full step, maintaining every companion.
pub fn step_state<R: Real>(s: &State<R>, ctx: &StepCtx<R>) -> State<R> {
    let one = &ctx.one;
    let a = if s.p <= ctx.half {
        ctx.m.clone() - ctx.m_minus_one.clone() * &s.p
    } else {
        one.clone() + ctx.m_minus_one.clone() * &s.w
    };
    let ln_a = a.ln();
    let inv_a = one.clone() / &a;
    let r1 = s.r.clone() * &inv_a;
    let q1 = s.p.clone() * &inv_a;
    let one_minus_r1 = one.clone() - &r1;
    let mut w1 = one_minus_r1.clone() * &ctx.m * &s.w * &inv_a;
    let mut p1 = r1.clone() + q1.clone() * &one_minus_r1;
    if w1 > *one {
        w1 = one.clone();
    }
    if p1 > *one {
        p1 = one.clone();
    }

    let log_r1 = s.log_r.clone() - &ln_a;
    let log_q1 = s.log_p.clone() - &ln_a;
    let ln_one_minus_r1 = (-r1.clone()).ln_1p();
    let log_w1 = ln_one_minus_r1.clone() + &ctx.ln_m + &s.log_w - &ln_a;
    // log p' from the direct value while it is a normal float; once p'
    // underflows, switch to log-sum-exp over p' = r' + q' - r' q'.
    let log_p1 = if p1 > p1.lit(f64::MIN_POSITIVE) {
        p1.ln()
    } else {
        let s_log = log_add_exp(&log_r1, &log_q1);
        let t = (log_r1.clone() + &log_q1 - &s_log).exp();
        s_log + (-t).ln_1p()
    };

    // ln(1 - (m-1) p / m) = ln(A/m) = ln A - ln m
    let offspring_factor_ln = ln_a.clone() - &ctx.ln_m;

    State {
        n: s.n + 1,
        r: r1,
        p: p1,
        w: w1,
        log_r: log_r1,
        log_p: log_p1,
        log_w: log_w1,
        q: Some(q1.clone()),
        cum_log_one_minus_r: s.cum_log_one_minus_r.clone() + &ln_one_minus_r1,
        cum_log_offspring_factor: s.cum_log_offspring_factor.clone() + &offspring_factor_ln,
        cum_one_minus_q: s.cum_one_minus_q.clone() + (one.clone() - &q1),
    }
}

/// A stored step of a trajectory.
#[derive(Debug, Clone)]
pub struct StepRecord<R: Real> {
    pub n: u64,
    pub law: GeometricTypeLaw<R>,
    pub log_r: R,
    pub log_p: R,
    pub log_one_minus_p: R,
    /// q_n, set on the successor record (None at n = 0).
    pub q: Option<R>,
    /// A_n = m - (m-1) p_n.
    pub a: R,
    pub cum_log_one_minus_r: R,
    pub cum_log_offspring_factor: R,
    pub cum_one_minus_q: R,
}

impl<R: Real> StepRecord<R> {
    fn from_state(s: &State<R>, m: &R) -> Self {
        StepRecord {
            n: s.n,
            law: GeometricTypeLaw::from_parts_unchecked(s.r.clone(), s.p.clone(), s.w.clone()),
            log_r: s.log_r.clone(),
            log_p: s.log_p.clone(),
            log_one_minus_p: s.log_w.clone(),
            q: s.q.clone(),
            a: s.a(m),
            cum_log_one_minus_r: s.cum_log_one_minus_r.clone(),
            cum_log_offspring_factor: s.cum_log_offspring_factor.clone(),
            cum_one_minus_q: s.cum_one_minus_q.clone(),
        }
    }

    pub fn r(&self) -> &R {
        self.law.r()
    }

    pub fn p(&self) -> &R {
        self.law.p()
    }

    pub fn survival(&self) -> &R {
        self.law.survival()
    }

    pub fn p_over_r(&self) -> R {
        if *self.r() > self.log_r.lit(f64::MIN_POSITIVE) {
            self.p().clone() / self.r()
        } else {
            (self.log_p.clone() - &self.log_r).exp()
        }
    }

    /// v_n = r_n - (1 - 1/m), the centered critical variable.
    pub fn v(&self, m: &R) -> R {
        let one = self.log_r.lit(1.0);
        self.r().clone() - (one.clone() - one / m)
    }
}

/// An iterated trajectory with one record per step, starting at n = 0.
#[derive(Debug, Clone)]
pub struct Trajectory<R: Real> {
    pub config: ModelConfig,
    pub records: Vec<StepRecord<R>>,
    final_state: State<R>,
    m: R,
}

impl<R: Real> Trajectory<R> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn m(&self) -> &R {
        &self.m
    }

    pub fn record(&self, n: usize) -> &StepRecord<R> {
        &self.records[n]
    }

    pub fn last(&self) -> &StepRecord<R> {
        self.records.last().expect("trajectory is never empty")
    }

    /// Resumable copy of the state after the last stored record.
    pub fn final_state(&self) -> State<R> {
        self.final_state.clone()
    }

    /// Extend this trajectory in place by `extra` steps.
    pub fn extend(&mut self, extra: u64) -> Result<()> {
        let total = self.records.len() as u64 - 1 + extra;
        if total > self.config.max_steps {
            return Err(DrError::ResourceBudget {
                what: "steps",
                requested: total,
                maximum: self.config.max_steps,
            });
        }
        let ctx = StepCtx::new(self.m.clone());
        for _ in 0..extra {
            self.final_state = step_state(&self.final_state, &ctx);
            self.records
                .push(StepRecord::from_state(&self.final_state, &ctx.m));
        }
        Ok(())
    }
}

/// Lift the configured offspring mean into the scalar type of `law0`.
pub fn lift_m<R: Real>(law0: &GeometricTypeLaw<R>, config: &ModelConfig) -> R {
    law0.r().lit(config.m)
}

/// One step of the parameter recursion on a law.
pub fn step<R: Real>(law: &GeometricTypeLaw<R>, config: &ModelConfig) -> GeometricTypeLaw<R> {
    let ctx = StepCtx::new(lift_m(law, config));
    let s = step_fast(&FastState::from_law(law), &ctx);
    GeometricTypeLaw::from_parts_unchecked(s.r, s.p, s.w)
}

/// Iterate `steps` steps from `law0`, recording every step.
pub fn iterate<R: Real>(
    law0: &GeometricTypeLaw<R>,
    config: &ModelConfig,
    steps: u64,
) -> Result<Trajectory<R>> {
    if steps > config.max_steps {
        return Err(DrError::ResourceBudget {
            what: "steps",
            requested: steps,
            maximum: config.max_steps,
        });
    }
    let ctx = StepCtx::new(lift_m(law0, config));
    let mut state = State::from_law(law0);
    let mut records = Vec::with_capacity(steps as usize + 1);
    records.push(StepRecord::from_state(&state, &ctx.m));
    for _ in 0..steps {
        state = step_state(&state, &ctx);
        records.push(StepRecord::from_state(&state, &ctx.m));
    }
    Ok(Trajectory {
        config: config.clone(),
        records,
        final_state: state,
        m: ctx.m,
    })
}

/// Stream `steps` fast steps from `law0`, calling `visit` on every state
/// (including the initial one). The visitor returns `false` to stop early.
/// Nothing is stored; memory is O(1).
pub fn run_visit<R: Real, F: FnMut(&FastState<R>) -> bool>(
    law0: &GeometricTypeLaw<R>,
    config: &ModelConfig,
    steps: u64,
    mut visit: F,
) -> FastState<R> {
    let ctx = StepCtx::new(lift_m(law0, config));
    let mut s = FastState::from_law(law0);
    if !visit(&s) {
        return s;
    }
    for _ in 0..steps {
        s = step_fast(&s, &ctx);
        if !visit(&s) {
            break;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::ExtReal;

    fn cfg(m: f64) -> ModelConfig {
        ModelConfig::new(m).unwrap()
    }

    fn law(r: f64, p: f64) -> GeometricTypeLaw<f64> {
        GeometricTypeLaw::new(r, p).unwrap()
    }

    #[test]
    fn step_exact_rationals() {
        let c = cfg(2.0);
        let l1 = step(&law(0.5, 0.5), &c);
        assert!((l1.r() - 1.0 / 3.0).abs() < 1e-15);
        assert!((l1.p() - 5.0 / 9.0).abs() < 1e-15);

        let l2 = step(&l1, &c);
        assert!((l2.r() - 3.0 / 13.0).abs() < 1e-15);
        assert!((l2.p() - 89.0 / 169.0).abs() < 1e-15);
    }

    #[test]
    fn step_small_p_limit_direction() {
        // A -> m as p -> 0, so r' -> r/m.
        let c = cfg(2.0);
        let l = law(0.5, 1e-13);
        let next = step(&l, &c);
        assert!((next.r() - 0.25).abs() < 1e-13);
    }

    #[test]
    fn iterate_records_and_monotonicity() {
        let c = cfg(2.0);
        let traj = iterate(&law(0.5, 0.5), &c, 50).unwrap();
        assert_eq!(traj.len(), 51);
        assert!((traj.record(0).r() - 0.5).abs() == 0.0);
        assert!((traj.record(1).r() - 1.0 / 3.0).abs() < 1e-15);
        assert!((traj.record(2).r() - 3.0 / 13.0).abs() < 1e-15);
        for k in 0..50 {
            assert_eq!(traj.record(k).n, k as u64);
            assert!(traj.record(k + 1).r() < traj.record(k).r());
            assert!(*traj.record(k + 1).r() > 0.0);
        }
    }

    #[test]
    fn iterate_zero_steps_is_identity() {
        let c = cfg(3.0);
        let traj = iterate(&law(0.3, 0.7), &c, 0).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(*traj.record(0).r(), 0.3);
        assert_eq!(*traj.record(0).p(), 0.7);
        assert!(traj.record(0).q.is_none());
    }

    #[test]
    fn iterate_respects_max_steps() {
        let mut c = cfg(2.0);
        c.max_steps = 100;
        assert!(matches!(
            iterate(&law(0.5, 0.5), &c, 101),
            Err(DrError::ResourceBudget { .. })
        ));
    }

    #[test]
    fn a_field_exact_and_in_range() {
        let c = cfg(2.7);
        let traj = iterate(&law(0.6, 0.4), &c, 20).unwrap();
        for rec in &traj.records {
            let expect = c.m - (c.m - 1.0) * rec.p();
            assert!((rec.a - expect).abs() <= 1e-15 * expect.abs());
            assert!(rec.a > 1.0 && rec.a < c.m);
        }
    }

    #[test]
    fn q_set_on_successor_records() {
        let c = cfg(2.0);
        let traj = iterate(&law(0.5, 0.5), &c, 3).unwrap();
        assert!(traj.record(0).q.is_none());
        // q_1 = r_1 p_0 / r_0 = (1/3)(1/2)/(1/2) = 1/3
        let q1 = traj.record(1).q.unwrap();
        assert!((q1 - 1.0 / 3.0).abs() < 1e-15);
        // and p' = 1 - (1-r')(1-q') reproduced
        let p1 = 1.0 - (1.0 - traj.record(1).r()) * (1.0 - q1);
        assert!((p1 - traj.record(1).p()).abs() < 1e-15);
    }

    #[test]
    fn log_companions_track_values() {
        let c = cfg(2.0);
        let traj = iterate(&law(0.5, 0.5), &c, 120).unwrap();
        for rec in &traj.records {
            if *rec.r() > 1e-300 {
                assert!(
                    (rec.log_r.exp() - rec.r()).abs() <= 1e-12 * rec.r(),
                    "n={}",
                    rec.n
                );
            }
            if *rec.p() > 1e-300 {
                assert!((rec.log_p.exp() - rec.p()).abs() <= 1e-12 * rec.p());
            }
            assert!((rec.log_one_minus_p.exp() - rec.survival()).abs() <= 1e-12 * rec.survival());
        }
    }

    #[test]
    fn deep_supercritical_survives_underflow() {
        // By n ~ 1100 (m = 2), r_n ~ 2^-n underflows f64; the log companions
        // must keep decreasing linearly in n.
        let c = cfg(2.0);
        let traj = iterate(&law(0.5, 0.5), &c, 1500).unwrap();
        let rec_a = traj.record(1400);
        let rec_b = traj.record(1401);
        assert_eq!(*rec_a.r(), 0.0, "expected f64 underflow at n=1400");
        let dlog = rec_b.log_r - rec_a.log_r;
        assert!(
            (dlog + c.m.ln()).abs() < 1e-9,
            "log r step should be -ln m, got {dlog}"
        );
        // telescoping sum keeps counting: p_n/r_n ~ n + const
        let y = rec_a.p_over_r();
        assert!((y - 1400.0).abs() < 10.0, "p/r far from n: {y}");
    }

    #[test]
    fn extended_matches_f64_at_short_horizon() {
        let c = cfg(2.0);
        let f = iterate(&law(0.5, 0.5), &c, 30).unwrap();
        let e0 =
            GeometricTypeLaw::new(ExtReal::with_digits(0.5, 50), ExtReal::with_digits(0.5, 50))
                .unwrap();
        let e = iterate(&e0, &c, 30).unwrap();
        for k in 0..=30 {
            let rf = *f.record(k).r();
            let re = e.record(k).r().to_f64();
            assert!((rf - re).abs() <= 4e-15 * re.abs(), "k={k}: {rf} vs {re}");
        }
    }

    #[test]
    fn run_visit_streams_and_stops() {
        let c = cfg(2.0);
        let mut seen = 0u64;
        let end = run_visit(&law(0.5, 0.5), &c, 100, |s| {
            seen += 1;
            s.n < 10
        });
        assert_eq!(end.n, 10);
        assert_eq!(seen, 11);
    }
}
