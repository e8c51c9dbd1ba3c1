//! Numerical laboratory for the generalized Derrida-Retaux recursion with
//! geometric offspring.
//!
//! The model iterates a max-type distributional recursion whose geometric-
//! type marginal G(r, p) is closed under the dynamics, reducing the process
//! to a two-parameter map. This crate provides:
//!
//! - exact iteration of the (r, p) map with underflow-safe log companions,
//!   in `f64` or software extended precision ([`recursion`], [`real`]);
//! - the algebraic identity suite the map satisfies ([`identities`]);
//! - regime classification, limit constants and a bisection locator for the
//!   critical manifold ([`regime`]);
//! - asymptotic expansions in every regime plus finite-n coefficient
//!   estimators ([`asymptotics`]);
//! - two independent oracles: truncated-PMF propagation of the full
//!   distributional step and a seeded Monte Carlo tree sampler
//!   ([`oracle`]);
//! - the exponential-type marginal variant ([`expvariant`]).
//!
//! ```
//! use drlab::{classify, iterate, GeometricTypeLaw, ModelConfig, Regime};
//!
//! let cfg = ModelConfig::new(2.0).unwrap();
//! let law = GeometricTypeLaw::new(0.5f64, 0.5).unwrap();
//!
//! // two exact steps: (1/2, 1/2) -> (1/3, 5/9) -> (3/13, 89/169)
//! let traj = iterate(&law, &cfg, 2).unwrap();
//! assert!((traj.record(1).r() - 1.0 / 3.0).abs() < 1e-15);
//! assert!((traj.record(2).p() - 89.0 / 169.0).abs() < 1e-15);
//!
//! // r_1 = 1/3 < 1 - 1/m, so this starting point is supercritical
//! let report = classify(&law, &cfg, 1_000, 1e-9).unwrap();
//! assert_eq!(report.regime, Regime::Supercritical);
//! assert!(report.free_energy.unwrap().value.value > 0.0);
//! ```

pub mod asymptotics;
pub mod config;
pub mod error;
pub mod expvariant;
pub mod identities;
pub mod law;
pub mod oracle;
pub mod real;
pub mod recursion;
pub mod regime;

pub use config::ModelConfig;
pub use error::{DrError, Result};
pub use law::GeometricTypeLaw;
pub use real::{ExtReal, Precision, Real};
pub use recursion::{iterate, run_visit, step, FastState, StepRecord, Trajectory};
pub use regime::{classify, Regime, RegimeReport};
