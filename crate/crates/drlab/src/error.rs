//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by model construction, iteration and analysis.
#[derive(Debug, Error)]
pub enum DrError {
    /// A parameter is outside its admissible range.
    #[error("invalid parameter {name}: {value} ({requirement})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },

    /// Generating-function argument outside the radius of convergence.
    #[error("pgf argument {s} outside radius of convergence {radius}")]
    Domain { s: f64, radius: f64 },

    /// An operation was applied to a trajectory of the wrong regime.
    #[error("regime mismatch: {op} requires a {expected} trajectory, got {actual}")]
    RegimeMismatch {
        op: &'static str,
        expected: &'static str,
        actual: String,
    },

    /// An iteration, grid or node budget would be exceeded.
    #[error("resource limit: {what} = {requested} exceeds maximum {maximum}")]
    ResourceBudget {
        what: &'static str,
        requested: u64,
        maximum: u64,
    },

    /// Requested tolerance is finer than the active precision can resolve.
    #[error("precision insufficient: tolerance {tol} below resolution {resolution} at the active precision")]
    PrecisionInsufficient { tol: f64, resolution: f64 },

    /// Bisection endpoints classified identically; no sign change to bracket.
    #[error("bracket not found: both endpoints classify as {class}")]
    BracketNotFound { class: &'static str },

    /// Bisection ran out of iteration budget before reaching the tolerance.
    /// Carries the best bracket obtained so far.
    #[error(
        "bracket budget exhausted: achieved width {achieved_width:e} > requested tolerance {tol:e} \
         (per-probe budget {probe_budget})"
    )]
    BracketBudgetExhausted {
        tol: f64,
        achieved_width: f64,
        probe_budget: u64,
    },

    /// Truncated-support propagation could not meet the tolerance within the cap.
    #[error("tolerance unachievable: support would exceed cap {cap} (needed ~{needed})")]
    ToleranceUnachievable { cap: usize, needed: usize },

    /// A coefficient estimator was given a trajectory shorter than its minimum.
    #[error("trajectory too short for {target}: need at least {min} records, got {got}")]
    InsufficientLength {
        target: &'static str,
        min: usize,
        got: usize,
    },
}

pub type Result<T> = std::result::Result<T, DrError>;
