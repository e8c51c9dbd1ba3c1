//! Ground-truth engines that do not trust the parameter recursion:
//! exact truncated-PMF propagation of the distributional step, and a seeded
//! Monte Carlo sampler of the raw branching recursion.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::ModelConfig;
use crate::error::{DrError, Result};
use crate::law::GeometricTypeLaw;
use crate::real::Real;

/// Default cap on convolution support length.
pub const DEFAULT_SUPPORT_CAP: usize = 1 << 16;

/// A finite probability vector over 0..N with an analytic bound on the
/// omitted mass.
#[derive(Debug, Clone)]
pub struct TruncatedPmf {
    pub masses: Vec<f64>,
    pub tail_bound: f64,
}

fn kahan_sum(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for &x in xs {
        let y = x - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

impl TruncatedPmf {
    /// Validating constructor: nonnegative masses, sum + tail within 1e-12
    /// of 1.
    pub fn new(masses: Vec<f64>, tail_bound: f64) -> Result<Self> {
        if masses.is_empty() {
            return Err(DrError::InvalidParameter {
                name: "masses",
                value: 0.0,
                requirement: "pmf needs at least one mass",
            });
        }
        for &x in &masses {
            if !(x >= 0.0) || !x.is_finite() {
                return Err(DrError::InvalidParameter {
                    name: "masses",
                    value: x,
                    requirement: "masses must be nonnegative and finite",
                });
            }
        }
        if !(tail_bound >= 0.0) {
            return Err(DrError::InvalidParameter {
                name: "tail_bound",
                value: tail_bound,
                requirement: "tail bound must be nonnegative",
            });
        }
        let total = kahan_sum(&masses) + tail_bound;
        if (total - 1.0).abs() > 1e-12 {
            return Err(DrError::InvalidParameter {
                name: "masses",
                value: total,
                requirement: "sum + tail_bound must lie within 1e-12 of 1",
            });
        }
        Ok(TruncatedPmf { masses, tail_bound })
    }

    /// Truncate a geometric-type law G(r, p) with analytic tail
    /// (1-p)(1-r)^N below `tol`.
    pub fn from_law<R: Real>(law: &GeometricTypeLaw<R>, tol: f64) -> Result<Self> {
        let r = law.r().to_f64();
        let p = law.p().to_f64();
        let w = law.survival().to_f64();
        if !(tol > 0.0) {
            return Err(DrError::InvalidParameter {
                name: "tol",
                value: tol,
                requirement: "tol must be positive",
            });
        }
        // smallest N with w (1-r)^N <= tol
        let n = if w <= tol {
            0
        } else {
            ((tol / w).ln() / (1.0 - r).ln()).ceil().max(1.0) as usize
        };
        if n + 1 > DEFAULT_SUPPORT_CAP {
            return Err(DrError::ToleranceUnachievable {
                cap: DEFAULT_SUPPORT_CAP,
                needed: n + 1,
            });
        }
        let mut masses = Vec::with_capacity(n + 1);
        masses.push(p);
        let mut geo = w * r; // (1-p) r (1-r)^(k-1) at k = 1
        for _ in 1..=n {
            masses.push(geo);
            geo *= 1.0 - r;
        }
        let tail = w * (1.0 - r).powi(n as i32);
        TruncatedPmf::new(masses, tail)
    }

    pub fn support_len(&self) -> usize {
        self.masses.len()
    }

    pub fn mass_sum(&self) -> f64 {
        kahan_sum(&self.masses)
    }

    /// Mean of the truncated part.
    pub fn mean(&self) -> f64 {
        self.masses
            .iter()
            .enumerate()
            .map(|(k, &x)| k as f64 * x)
            .sum()
    }
}

/// Total variation distance between two truncated pmfs: half the L1
/// distance over the union support plus both tail bounds (an upper bound on
/// the true TV distance), clamped to [0, 1].
pub fn tv_distance(a: &TruncatedPmf, b: &TruncatedPmf) -> f64 {
    let n = a.masses.len().max(b.masses.len());
    let mut l1 = 0.0;
    let mut c = 0.0;
    for k in 0..n {
        let xa = a.masses.get(k).copied().unwrap_or(0.0);
        let xb = b.masses.get(k).copied().unwrap_or(0.0);
        let y = (xa - xb).abs() - c;
        let t = l1 + y;
        c = (t - l1) - y;
        l1 = t;
    }
    (0.5 * l1 + a.tail_bound + b.tail_bound).min(1.0)
}

/// Options for the propagation step.
#[derive(Debug, Clone, Copy)]
pub struct PropagateOptions {
    pub support_cap: usize,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        PropagateOptions {
            support_cap: DEFAULT_SUPPORT_CAP,
        }
    }
}

/// One distributional step: the law of (sum_{k=1}^eta Y_k - 1)_+ where eta
/// is geometric with mean `m` and the Y_k are iid with law `pmf`.
///
/// The compound law is built by direct truncated convolution
/// sum_j P(eta = j) pmf^(*j), keeping j while (1-1/m)^(j-1) >= tol, then the
/// result is shifted down by one with the masses at {0,1} folded into 0 and
/// the support re-truncated so the total tail bound stays <= tol plus the
/// inflated input tail.
pub fn propagate_pmf(
    pmf: &TruncatedPmf,
    m: f64,
    tol: f64,
    opts: &PropagateOptions,
) -> Result<TruncatedPmf> {
    if !(m > 1.0) {
        return Err(DrError::InvalidParameter {
            name: "m",
            value: m,
            requirement: "m > 1",
        });
    }
    if !(tol >= 1e-14) {
        return Err(DrError::InvalidParameter {
            name: "tol",
            value: tol,
            requirement: "tol >= 1e-14",
        });
    }
    let theta = 1.0 / m;
    let keep = 1.0 - theta;

    // j-truncation: include j while keep^(j-1) >= tol.
    let j_max = ((tol.ln() / keep.ln()).floor() as i64).max(0) as usize + 1;
    let omitted_offspring = keep.powi(j_max as i32);

    // Per-power tail-trim budget so all trims together stay below tol/10.
    let trim_budget = tol / (10.0 * j_max as f64);

    let base = &pmf.masses;
    let mut compound = vec![0.0f64; base.len() + 2];
    let mut power: Vec<f64> = base.clone();
    let mut weight = theta;
    // raw mass trimmed from the running power so far; the j-th compound
    // contribution is then missing weight_j * (that mass), which is charged
    // exactly below.
    let mut power_missing = 0.0f64;
    let mut trimmed_mass = 0.0f64;

    for j in 1..=j_max {
        if j > 1 {
            // power <- power * base, truncated at the cap.
            let new_len = power.len() + base.len() - 1;
            if new_len > opts.support_cap {
                return Err(DrError::ToleranceUnachievable {
                    cap: opts.support_cap,
                    needed: new_len,
                });
            }
            let mut next = vec![0.0f64; new_len];
            for (i, &pi) in power.iter().enumerate() {
                if pi == 0.0 {
                    continue;
                }
                for (k, &bk) in base.iter().enumerate() {
                    next[i + k] += pi * bk;
                }
            }
            // Trim the trailing tail of the power within the per-j budget.
            let mut dropped = 0.0;
            while next.len() > 1 {
                let last = *next.last().unwrap();
                if dropped + last <= trim_budget {
                    dropped += last;
                    next.pop();
                } else {
                    break;
                }
            }
            power_missing += dropped;
            power = next;
        }
        trimmed_mass += weight * power_missing;
        if compound.len() < power.len() {
            compound.resize(power.len(), 0.0);
        }
        for (i, &pi) in power.iter().enumerate() {
            compound[i] += weight * pi;
        }
        weight *= keep;
    }

    // Input-tail inflation: omitted input mass re-enters through every
    // summand; E(eta) = m bounds the total effect.
    let input_tail = m * pmf.tail_bound;

    // Shift down by one, folding {0, 1} into 0.
    let mut shifted = Vec::with_capacity(compound.len().saturating_sub(1).max(1));
    let at0 = compound.first().copied().unwrap_or(0.0) + compound.get(1).copied().unwrap_or(0.0);
    shifted.push(at0);
    if compound.len() > 2 {
        shifted.extend_from_slice(&compound[2..]);
    }

    // Re-truncate the support: drop trailing mass while the total tail
    // bound stays within tol + inflated input tail.
    let fixed_tail = input_tail + omitted_offspring + trimmed_mass;
    let allowance = (tol - omitted_offspring - trimmed_mass).max(0.0);
    let mut dropped = 0.0;
    while shifted.len() > 1 {
        let last = *shifted.last().unwrap();
        if dropped + last <= allowance * 0.5 {
            dropped += last;
            shifted.pop();
        } else {
            break;
        }
    }

    let tail_bound = fixed_tail + dropped;
    TruncatedPmf::new(shifted, tail_bound)
}

/// Configuration of the Monte Carlo tree sampler.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct McConfig {
    pub seed: u64,
    pub samples: u64,
    /// Depth n of the recursion.
    pub depth: u32,
    /// Cap on the expected total node count samples * m^depth.
    pub node_budget: u64,
}

impl McConfig {
    pub fn new(seed: u64, samples: u64, depth: u32) -> Self {
        McConfig {
            seed,
            samples,
            depth,
            node_budget: 100_000_000,
        }
    }
}

/// Empirical summary of a Monte Carlo run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct McSummary {
    pub samples: u64,
    /// counts[v] = number of samples with Y = v.
    pub counts: Vec<u64>,
    pub mean: f64,
    pub sample_sd: f64,
    /// Standard error of the mean.
    pub se_mean: f64,
    pub survival_freq: f64,
    pub se_survival: f64,
    /// Conditional frequencies given Y >= 1, indexed from 1.
    pub conditional_pmf: Vec<f64>,
}

/// Uniform in the open interval (0,1), reproducible across platforms.
fn uniform_open(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
}

/// Geometric on {1,2,...} with success probability `theta`, by inversion:
/// floor(ln U / ln(1-theta)) + 1.
fn geometric_inversion(u: f64, ln_one_minus_theta: f64) -> u64 {
    (u.ln() / ln_one_minus_theta).floor() as u64 + 1
}

struct Frame {
    depth: u32,
    remaining: u64,
    acc: u64,
}

/// Evaluate one depth-n sample of the branching recursion with an explicit
/// stack (depth of the stack is bounded by n).
fn sample_once(
    rng: &mut ChaCha8Rng,
    depth: u32,
    p0: f64,
    ln_one_minus_r0: f64,
    ln_keep: f64,
) -> u64 {
    let leaf = |rng: &mut ChaCha8Rng| -> u64 {
        let u = uniform_open(rng);
        if u < p0 {
            0
        } else {
            geometric_inversion(uniform_open(rng), ln_one_minus_r0)
        }
    };
    if depth == 0 {
        return leaf(rng);
    }
    let mut stack: Vec<Frame> = Vec::with_capacity(depth as usize);
    let eta = geometric_inversion(uniform_open(rng), ln_keep);
    stack.push(Frame {
        depth,
        remaining: eta,
        acc: 0,
    });
    loop {
        let top = stack.last_mut().expect("stack never empties mid-walk");
        if top.remaining == 0 {
            let v = top.acc.saturating_sub(1);
            let d = top.depth;
            stack.pop();
            match stack.last_mut() {
                Some(parent) => {
                    debug_assert!(parent.depth == d + 1);
                    parent.acc += v;
                }
                None => return v,
            }
            continue;
        }
        top.remaining -= 1;
        if top.depth == 1 {
            top.acc += leaf(rng);
        } else {
            let child_depth = top.depth - 1;
            let eta = geometric_inversion(uniform_open(rng), ln_keep);
            stack.push(Frame {
                depth: child_depth,
                remaining: eta,
                acc: 0,
            });
        }
    }
}

fn rng_for_sample(seed: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Seeded Monte Carlo estimate of the law of Y_n. Deterministic for a given
/// config: the RNG stream of sample i is derived from (seed, i), so serial
/// and parallel runs agree bit for bit.
pub fn mc_sample<R: Real>(
    law0: &GeometricTypeLaw<R>,
    config: &ModelConfig,
    mc: &McConfig,
) -> Result<McSummary> {
    if mc.samples < 1 {
        return Err(DrError::InvalidParameter {
            name: "samples",
            value: mc.samples as f64,
            requirement: "samples >= 1",
        });
    }
    let expected_nodes = mc.samples as f64 * config.m.powi(mc.depth as i32);
    if !(expected_nodes <= mc.node_budget as f64) {
        return Err(DrError::ResourceBudget {
            what: "expected tree nodes",
            requested: expected_nodes as u64,
            maximum: mc.node_budget,
        });
    }
    let p0 = law0.p().to_f64();
    let ln_one_minus_r0 = (1.0 - law0.r().to_f64()).ln();
    let ln_keep = (1.0 - 1.0 / config.m).ln();

    let counts: Vec<u64> = (0..mc.samples)
        .into_par_iter()
        .fold(Vec::<u64>::new, |mut acc, i| {
            let mut rng = rng_for_sample(mc.seed, i);
            let v = sample_once(&mut rng, mc.depth, p0, ln_one_minus_r0, ln_keep) as usize;
            if acc.len() <= v {
                acc.resize(v + 1, 0);
            }
            acc[v] += 1;
            acc
        })
        .reduce(Vec::new, |mut a, b| {
            if a.len() < b.len() {
                a.resize(b.len(), 0);
            }
            for (k, c) in b.into_iter().enumerate() {
                a[k] += c;
            }
            a
        });

    let n = mc.samples;
    let mut sum_v: u128 = 0;
    let mut sum_v2: u128 = 0;
    for (v, &c) in counts.iter().enumerate() {
        sum_v += (v as u128) * (c as u128);
        sum_v2 += (v as u128) * (v as u128) * (c as u128);
    }
    let mean = sum_v as f64 / n as f64;
    let var = if n > 1 {
        (sum_v2 as f64 - n as f64 * mean * mean) / (n as f64 - 1.0)
    } else {
        0.0
    };
    let sample_sd = var.max(0.0).sqrt();
    let zero = counts.first().copied().unwrap_or(0);
    let survival_freq = (n - zero) as f64 / n as f64;
    let se_survival = (survival_freq * (1.0 - survival_freq) / n as f64).sqrt();
    let positives = (n - zero) as f64;
    let conditional_pmf = if positives > 0.0 {
        counts
            .iter()
            .skip(1)
            .map(|&c| c as f64 / positives)
            .collect()
    } else {
        Vec::new()
    };
    Ok(McSummary {
        samples: n,
        counts,
        mean,
        sample_sd,
        se_mean: sample_sd / (n as f64).sqrt(),
        survival_freq,
        se_survival,
        conditional_pmf,
    })
}

/// Pearson chi-square statistic of the conditional counts against a
/// geometric(r) law, pooling the tail so every bin has expected count at
/// least `min_expected`. Returns (statistic, degrees of freedom).
pub fn chi_square_conditional(summary: &McSummary, r: f64, min_expected: f64) -> (f64, usize) {
    let positives: u64 = summary.counts.iter().skip(1).sum();
    let np = positives as f64;
    let mut bins: Vec<(f64, f64)> = Vec::new(); // (observed, expected)
    let mut k = 1usize;
    let mut tail_prob = 1.0f64; // P(Y >= k | Y >= 1)
    let mut obs_acc = 0.0f64;
    let mut exp_acc = 0.0f64;
    loop {
        let pk = r * (1.0 - r).powi(k as i32 - 1);
        let ek = np * pk;
        let ok = summary.counts.get(k).copied().unwrap_or(0) as f64;
        obs_acc += ok;
        exp_acc += ek;
        tail_prob -= pk;
        let tail_expected = np * tail_prob;
        if exp_acc >= min_expected && tail_expected >= min_expected {
            bins.push((obs_acc, exp_acc));
            obs_acc = 0.0;
            exp_acc = 0.0;
        }
        if tail_expected < min_expected {
            // close out: remaining observed mass vs remaining expected
            let rest_obs: f64 = summary
                .counts
                .iter()
                .skip(k + 1)
                .map(|&c| c as f64)
                .sum::<f64>()
                + obs_acc;
            let rest_exp = np * tail_prob + exp_acc;
            bins.push((rest_obs, rest_exp));
            break;
        }
        k += 1;
        if k > summary.counts.len() + 64 {
            let rest_obs: f64 = obs_acc;
            let rest_exp = np * tail_prob + exp_acc;
            bins.push((rest_obs, rest_exp));
            break;
        }
    }
    let stat: f64 = bins
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    (stat, bins.len().saturating_sub(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recursion::{iterate, step};

    fn cfg() -> ModelConfig {
        ModelConfig::new(2.0).unwrap()
    }

    fn law(r: f64, p: f64) -> GeometricTypeLaw<f64> {
        GeometricTypeLaw::new(r, p).unwrap()
    }

    #[test]
    fn from_law_tail_bound_and_sum() {
        let pmf = TruncatedPmf::from_law(&law(0.3, 0.4), 1e-12).unwrap();
        assert!(pmf.tail_bound <= 1e-12);
        assert!((pmf.mass_sum() + pmf.tail_bound - 1.0).abs() < 1e-12);
        assert!(pmf.masses.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn constructor_rejects_bad_pmfs() {
        assert!(TruncatedPmf::new(vec![0.5, 0.4], 0.0).is_err()); // sums to 0.9
        assert!(TruncatedPmf::new(vec![1.1, -0.1], 0.0).is_err());
        assert!(TruncatedPmf::new(vec![], 1.0).is_err());
        assert!(TruncatedPmf::new(vec![0.5, 0.5], 0.0).is_ok());
    }

    #[test]
    fn tv_identities() {
        let a = TruncatedPmf::new(vec![0.25, 0.75], 0.0).unwrap();
        assert_eq!(tv_distance(&a, &a), 0.0);
        let zero = TruncatedPmf::new(vec![1.0], 0.0).unwrap();
        let one = TruncatedPmf::new(vec![0.0, 1.0], 0.0).unwrap();
        assert_eq!(tv_distance(&zero, &one), 1.0);
        let b = TruncatedPmf::new(vec![0.5, 0.5], 0.0).unwrap();
        assert_eq!(tv_distance(&a, &b), tv_distance(&b, &a));
    }

    #[test]
    fn propagate_matches_closed_form_one_step() {
        let cfg = cfg();
        let l0 = law(0.5, 0.5);
        let pmf0 = TruncatedPmf::from_law(&l0, 1e-12).unwrap();
        let out = propagate_pmf(&pmf0, 2.0, 1e-12, &PropagateOptions::default()).unwrap();
        let l1 = step(&l0, &cfg);
        let pmf1 = TruncatedPmf::from_law(&l1, 1e-12).unwrap();
        let tv = tv_distance(&out, &pmf1);
        assert!(tv <= 1e-9, "tv {tv:e}");
        // exact targets: r_1 = 1/3, p_1 = 5/9
        assert!((out.masses[0] - 5.0 / 9.0).abs() < 1e-10);
    }

    #[test]
    fn propagate_point_mass_at_zero_stays_at_zero() {
        // every summand is 0; the shift clamps at 0
        let unit = TruncatedPmf::new(vec![1.0], 0.0).unwrap();
        let out = propagate_pmf(&unit, 2.0, 1e-12, &PropagateOptions::default()).unwrap();
        assert!(out.masses[0] >= 1.0 - 1e-12);
        let rest: f64 = out.masses.iter().skip(1).sum();
        assert!(rest <= 1e-12);
    }

    #[test]
    fn propagate_conserves_probability() {
        for (m, r, p) in [(1.7, 0.4, 0.2), (2.5, 0.6, 0.7), (4.0, 0.7, 0.35)] {
            let pmf = TruncatedPmf::from_law(&law(r, p), 1e-12).unwrap();
            let out = propagate_pmf(&pmf, m, 1e-12, &PropagateOptions::default()).unwrap();
            let total = out.mass_sum() + out.tail_bound;
            assert!(
                (total - 1.0).abs() < 1e-11,
                "m={m} r={r} p={p}: total {total}"
            );
            assert!(out.masses.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn propagated_conditional_is_geometric() {
        // structure of G(r, p): conditional on >= 1, the propagated law must
        // be geometric with the next step's r.
        let cfg = cfg();
        let l0 = law(0.45, 0.3);
        let pmf0 = TruncatedPmf::from_law(&l0, 1e-13).unwrap();
        let out = propagate_pmf(&pmf0, 2.0, 1e-13, &PropagateOptions::default()).unwrap();
        let l1 = step(&l0, &cfg);
        let pos: f64 = out.masses.iter().skip(1).sum();
        let mut tv = 0.0;
        for k in 1..out.masses.len() {
            let cond = out.masses[k] / pos;
            let geo = l1.conditional_pmf(k as u64);
            tv += (cond - geo).abs();
        }
        assert!(0.5 * tv < 1e-9, "conditional tv {tv:e}");
    }

    #[test]
    fn theorem_preservation_random_configs_five_steps() {
        // closed-form marginals are preserved by the distributional step;
        // configurations are redrawn when r_5 gets small enough that the
        // truncated supports (and so the convolution cost) blow up.
        let mut rng = rng_for_sample(0xD15EA5E, 7);
        let mut done = 0;
        while done < 5 {
            let m = 1.5 + 2.0 * uniform_open(&mut rng);
            let r0 = 0.35 + 0.55 * uniform_open(&mut rng);
            let p0 = 0.15 + 0.7 * uniform_open(&mut rng);
            let cfg = ModelConfig::new(m).unwrap();
            let l0 = GeometricTypeLaw::new(r0, p0).unwrap();
            let traj = iterate(&l0, &cfg, 5).unwrap();
            if *traj.record(5).r() < 0.03 {
                continue;
            }
            done += 1;
            let mut pmf = TruncatedPmf::from_law(&l0, 1e-12).unwrap();
            for k in 1..=5 {
                pmf = propagate_pmf(&pmf, m, 1e-12, &PropagateOptions::default()).unwrap();
                let closed = TruncatedPmf::from_law(&traj.record(k).law, 1e-12).unwrap();
                let tv = tv_distance(&pmf, &closed);
                assert!(
                    tv <= 1e-9,
                    "m={m:.3} r0={r0:.3} p0={p0:.3} k={k}: tv {tv:e}"
                );
            }
        }
    }

    #[test]
    fn mc_depth_zero_recovers_initial_law() {
        let l = law(0.5, 0.5);
        let mc = McConfig::new(42, 40_000, 0);
        let s = mc_sample(&l, &cfg(), &mc).unwrap();
        let se = s.se_survival.max(1e-9);
        assert!((s.survival_freq - 0.5).abs() <= 3.0 * se);
        assert!((s.mean - 1.0).abs() <= 3.0 * s.se_mean);
    }

    #[test]
    fn mc_is_deterministic_for_fixed_seed() {
        let l = law(0.5, 0.5);
        let mc = McConfig::new(7, 20_000, 4);
        let a = mc_sample(&l, &cfg(), &mc).unwrap();
        let b = mc_sample(&l, &cfg(), &mc).unwrap();
        assert_eq!(a.counts, b.counts);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        let c = mc_sample(&l, &cfg(), &McConfig::new(8, 20_000, 4)).unwrap();
        assert_ne!(a.counts, c.counts, "different seeds should differ");
    }

    #[test]
    fn mc_budget_checked_before_work() {
        let l = law(0.5, 0.5);
        let mc = McConfig {
            seed: 1,
            samples: 1_000_000,
            depth: 30,
            node_budget: 1_000_000,
        };
        assert!(matches!(
            mc_sample(&l, &cfg(), &mc),
            Err(DrError::ResourceBudget { .. })
        ));
    }

    #[test]
    fn mc_matches_exact_survival_at_depth_8() {
        let cfg = cfg();
        let l = law(0.5, 0.5);
        let traj = iterate(&l, &cfg, 8).unwrap();
        let exact_surv = *traj.record(8).survival();
        let mc = McConfig::new(20250809, 100_000, 8);
        let s = mc_sample(&l, &cfg, &mc).unwrap();
        assert!(
            (s.survival_freq - exact_surv).abs() <= 3.0 * s.se_survival,
            "survival {} vs exact {} (se {})",
            s.survival_freq,
            exact_surv,
            s.se_survival
        );
        let exact_mean = traj.record(8).law.mean();
        assert!(
            (s.mean - exact_mean).abs() <= 3.0 * s.se_mean,
            "mean {} vs exact {} (se {})",
            s.mean,
            exact_mean,
            s.se_mean
        );
    }

    #[test]
    fn mc_mean_within_three_se_across_seeds() {
        // estimator consistency: the empirical mean lands within 3 standard
        // errors of (1-p_n)/r_n in at least 97 of 100 seeded repetitions
        // (3 SE covers ~99.7%; 97/100 leaves binomial slack)
        let cfg = cfg();
        let l = law(0.5, 0.5);
        let traj = iterate(&l, &cfg, 4).unwrap();
        let exact = traj.record(4).law.mean();
        let mut hits = 0;
        for seed in 0..100u64 {
            let s = mc_sample(&l, &cfg, &McConfig::new(1000 + seed, 5_000, 4)).unwrap();
            if (s.mean - exact).abs() <= 3.0 * s.se_mean {
                hits += 1;
            }
        }
        assert!(hits >= 97, "only {hits}/100 runs within 3 SE");
    }

    #[test]
    fn chi_square_pools_small_bins() {
        let l = law(0.5, 0.5);
        let mc = McConfig::new(5, 50_000, 3);
        let cfg = cfg();
        let traj = iterate(&l, &cfg, 3).unwrap();
        let s = mc_sample(&l, &cfg, &mc).unwrap();
        let (stat, df) = chi_square_conditional(&s, *traj.record(3).r(), 5.0);
        assert!(df >= 2, "df {df}");
        assert!(stat.is_finite() && stat >= 0.0);
    }
}
