//! Command-line front end: iterate, classify, locate the critical manifold,
//! scan the phase diagram, compare expansions, and drive the two oracles.
//! Every command is deterministic given its manifest; outputs carry the
//! manifest alongside (stderr for stdout payloads, a sibling
//! `.manifest.json` for --out files).
//!
//! Exit codes: 0 success, 2 usage, 3 resource/budget, 4 precision.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use drlab::asymptotics::{compare_expansions, corollary_values, RegimeConstants};
use drlab::error::DrError;
use drlab::expvariant::{exp_iterate, ExpVariantConfig, ExponentialTypeLaw};
use drlab::identities::identity_residuals;
use drlab::law::GeometricTypeLaw;
use drlab::oracle::{
    mc_sample, propagate_pmf, tv_distance, McConfig, PropagateOptions, TruncatedPmf,
};
use drlab::real::{ExtReal, Precision, Real};
use drlab::recursion::{iterate, Trajectory};
use drlab::regime::{classify, critical_locate, phase_scan, GridSpec, LocateParams, Regime};
use drlab::ModelConfig;

use output::{fmt, json_with_manifest, sig_digits, Csv, RunManifest, Sink};

#[derive(Parser)]
#[command(
    name = "drlab",
    version,
    about = "Numerical laboratory for the generalized Derrida-Retaux recursion with geometric offspring"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Iterate the (r, p) recursion and emit per-step values with the
    /// exact-identity residual columns.
    Iterate(IterateArgs),
    /// Classify a starting point and compute its regime constants.
    Classify(ClassifyArgs),
    /// Bisect for the critical p0 at fixed r0.
    CriticalLocate(LocateArgs),
    /// Classify a grid of starting points.
    PhaseScan(PhaseScanArgs),
    /// Compare the regime expansions against the exact trajectory.
    Expand(ExpandArgs),
    /// Monte Carlo sampling of the depth-n branching recursion.
    Mc(McArgs),
    /// Propagate a truncated pmf through the distributional step and
    /// compare against the closed-form marginals.
    PropagatePmf(PropagatePmfArgs),
    /// Iterate the exponential-type marginal recursion.
    ExpVariant(ExpVariantArgs),
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "standard" => Ok(Precision::Standard),
        other => match other.strip_prefix("extended:") {
            Some(d) => {
                let digits: u32 = d
                    .parse()
                    .map_err(|_| format!("invalid digit count in '{other}'"))?;
                if digits < 30 {
                    return Err("extended precision needs at least 30 digits".into());
                }
                Ok(Precision::Extended { digits })
            }
            None => Err(format!(
                "unknown precision '{other}' (use 'standard' or 'extended:<digits>')"
            )),
        },
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct CommonArgs {
    /// Arithmetic precision: 'standard' or 'extended:<digits>'.
    #[arg(long, default_value = "standard", value_parser = parse_precision)]
    precision: Precision,
    /// Output path (default: stdout; the manifest goes to stderr for
    /// stdout, or to <out>.manifest.json next to a file).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IterateArgs {
    #[arg(long)]
    m: f64,
    #[arg(long)]
    r0: String,
    #[arg(long)]
    p0: String,
    #[arg(long)]
    steps: u64,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    m: f64,
    #[arg(long)]
    r0: String,
    #[arg(long)]
    p0: String,
    #[arg(long, default_value_t = 200_000)]
    budget: u64,
    #[arg(long, default_value_t = 1e-9)]
    delta: f64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct LocateArgs {
    #[arg(long)]
    m: f64,
    #[arg(long)]
    r0: String,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long, default_value_t = 0.05)]
    p_lo: f64,
    #[arg(long, default_value_t = 0.95)]
    p_hi: f64,
    #[arg(long, default_value_t = 1e-9)]
    delta: f64,
    #[arg(long, default_value_t = 20_000)]
    initial_probe_budget: u64,
    #[arg(long, default_value_t = 4_000_000)]
    max_probe_budget: u64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct PhaseScanArgs {
    #[arg(long)]
    m: f64,
    #[arg(long, default_value_t = 0.0)]
    r0_min: f64,
    #[arg(long, default_value_t = 1.0)]
    r0_max: f64,
    #[arg(long, default_value_t = 100)]
    r0_cells: usize,
    #[arg(long, default_value_t = 0.0)]
    p0_min: f64,
    #[arg(long, default_value_t = 1.0)]
    p0_max: f64,
    #[arg(long, default_value_t = 100)]
    p0_cells: usize,
    #[arg(long, default_value_t = 20_000)]
    budget: u64,
    #[arg(long, default_value_t = 1e-9)]
    delta: f64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RegimeArg {
    Auto,
    Supercritical,
    Subcritical,
    Critical,
}

#[derive(Args)]
struct ExpandArgs {
    #[arg(long)]
    m: f64,
    #[arg(long)]
    r0: String,
    #[arg(long)]
    p0: String,
    #[arg(long)]
    n_max: u64,
    /// Regime for the expansion constants; 'auto' classifies first and
    /// treats an undecided near-critical run as critical.
    #[arg(long, value_enum, default_value = "auto")]
    regime: RegimeArg,
    /// Generating-function argument for the pgf expansion columns.
    #[arg(long)]
    s: Option<f64>,
    #[arg(long, default_value_t = 200_000)]
    budget: u64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct McArgs {
    #[arg(long)]
    m: f64,
    #[arg(long)]
    r0: f64,
    #[arg(long)]
    p0: f64,
    #[arg(long)]
    depth: u32,
    #[arg(long)]
    samples: u64,
    #[arg(long, required = true)]
    seed: u64,
    #[arg(long, default_value_t = 100_000_000)]
    node_budget: u64,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct PropagatePmfArgs {
    #[arg(long)]
    m: f64,
    #[arg(long)]
    r0: f64,
    #[arg(long)]
    p0: f64,
    #[arg(long)]
    steps: u64,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ExpVariantArgs {
    #[arg(long)]
    m: f64,
    /// Decay parameter of the step; defaults to ln m.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda0: f64,
    #[arg(long)]
    p0: f64,
    #[arg(long)]
    steps: u64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Dr(DrError),
    Io(std::io::Error),
}

impl From<DrError> for CliError {
    fn from(e: DrError) -> Self {
        CliError::Dr(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Dr(e) => match e {
                DrError::InvalidParameter { .. }
                | DrError::Domain { .. }
                | DrError::RegimeMismatch { .. }
                | DrError::InsufficientLength { .. }
                | DrError::BracketNotFound { .. } => 2,
                DrError::ResourceBudget { .. }
                | DrError::BracketBudgetExhausted { .. }
                | DrError::ToleranceUnachievable { .. } => 3,
                DrError::PrecisionInsufficient { .. } => 4,
            },
            CliError::Io(_) => 1,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(s) => s.clone(),
            CliError::Dr(e) => e.to_string(),
            CliError::Io(e) => e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Iterate(a) => dispatch_precision(a.common.precision, |p| cmd_iterate(&a, p)),
        Cmd::Classify(a) => dispatch_precision(a.common.precision, |p| cmd_classify(&a, p)),
        Cmd::CriticalLocate(a) => {
            dispatch_precision(a.common.precision, |p| cmd_critical_locate(&a, p))
        }
        Cmd::PhaseScan(a) => cmd_phase_scan(&a),
        Cmd::Expand(a) => dispatch_precision(a.common.precision, |p| cmd_expand(&a, p)),
        Cmd::Mc(a) => cmd_mc(&a),
        Cmd::PropagatePmf(a) => cmd_propagate_pmf(&a),
        Cmd::ExpVariant(a) => cmd_exp_variant(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("drlab: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

/// Run a closure with either an f64 or an extended-precision prototype.
fn dispatch_precision<F>(precision: Precision, f: F) -> Result<(), CliError>
where
    F: FnOnce(Proto) -> Result<(), CliError>,
{
    match precision {
        Precision::Standard => f(Proto::Std(0.0)),
        Precision::Extended { digits } => f(Proto::Ext(ExtReal::with_digits(0.0, digits))),
    }
}

enum Proto {
    Std(f64),
    Ext(ExtReal),
}

fn parse_real<R: Real>(proto: &R, name: &str, s: &str) -> Result<R, CliError> {
    proto
        .from_decimal(s)
        .ok_or_else(|| CliError::Usage(format!("--{name}: cannot parse '{s}' as a decimal number")))
}

fn model_config(m: f64, precision: Precision) -> Result<ModelConfig, CliError> {
    Ok(ModelConfig::new(m)?.with_precision(precision)?)
}

// ---------------------------------------------------------------- iterate

fn cmd_iterate(args: &IterateArgs, proto: Proto) -> Result<(), CliError> {
    match proto {
        Proto::Std(p) => iterate_impl(args, &p),
        Proto::Ext(p) => iterate_impl(args, &p),
    }
}

fn iterate_impl<R: Real>(args: &IterateArgs, proto: &R) -> Result<(), CliError> {
    let cfg = model_config(args.m, args.common.precision)?;
    let r0 = parse_real(proto, "r0", &args.r0)?;
    let p0 = parse_real(proto, "p0", &args.p0)?;
    let law = GeometricTypeLaw::new(r0, p0)?;
    let traj = iterate(&law, &cfg, args.steps)?;
    let digits = sig_digits(args.common.precision);
    let nan = proto.lit(f64::NAN);

    let residuals = if traj.len() >= 3 {
        Some(identity_residuals(&traj)?)
    } else {
        None
    };

    let header = [
        "n",
        "r",
        "p",
        "log_r",
        "log_one_minus_p",
        "mean",
        "survival",
        "q_next",
        "R1",
        "R2",
        "R3_corrected",
        "R3_variant",
    ];
    let mut rows: Vec<Vec<String>> = Vec::with_capacity(traj.len());
    for (k, rec) in traj.records.iter().enumerate() {
        let q_next = traj
            .records
            .get(k + 1)
            .and_then(|next| next.q.clone())
            .unwrap_or_else(|| nan.clone());
        let (r1, r2, r3c, r3p) = match &residuals {
            Some(rows) => {
                let row = &rows[k];
                (
                    row.r1.clone().unwrap_or_else(|| nan.clone()),
                    row.r2.clone().unwrap_or_else(|| nan.clone()),
                    row.r3_corrected.clone().unwrap_or_else(|| nan.clone()),
                    row.r3_variant_raw.clone().unwrap_or_else(|| nan.clone()),
                )
            }
            None => (nan.clone(), nan.clone(), nan.clone(), nan.clone()),
        };
        let mean = rec.survival().clone() / rec.r();
        rows.push(vec![
            rec.n.to_string(),
            fmt(rec.r(), digits),
            fmt(rec.p(), digits),
            fmt(&rec.log_r, digits),
            fmt(&rec.log_one_minus_p, digits),
            fmt(&mean, digits),
            fmt(rec.survival(), digits),
            fmt(&q_next, digits),
            fmt(&r1, digits),
            fmt(&r2, digits),
            fmt(&r3c, digits),
            fmt(&r3p, digits),
        ]);
    }

    let manifest = RunManifest::new("iterate", args.common.precision)
        .param("m", args.m)
        .param("r0", &args.r0)
        .param("p0", &args.p0)
        .param("steps", args.steps)
        .param(
            "format",
            if args.format == Format::Csv {
                "csv"
            } else {
                "json"
            },
        );

    let sink = Sink::from_out(&args.common.out);
    match args.format {
        Format::Csv => {
            let mut csv = Csv::new(&header);
            for row in rows {
                csv.row(&row);
            }
            let payload = csv.into_bytes();
            let manifest = manifest.seal(&payload);
            sink.write(&payload, &manifest)?;
        }
        Format::Json => {
            let report: Vec<serde_json::Value> = rows
                .iter()
                .map(|row| {
                    let mut obj = serde_json::Map::new();
                    for (key, value) in header.iter().zip(row) {
                        obj.insert(key.to_string(), serde_json::Value::String(value.clone()));
                    }
                    serde_json::Value::Object(obj)
                })
                .collect();
            let payload = json_with_manifest(&report, manifest);
            sink.write(
                &payload,
                &RunManifest::new("iterate", args.common.precision),
            )?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- classify

fn cmd_classify(args: &ClassifyArgs, proto: Proto) -> Result<(), CliError> {
    match proto {
        Proto::Std(p) => classify_impl(args, &p),
        Proto::Ext(p) => classify_impl(args, &p),
    }
}

fn classify_impl<R: Real>(args: &ClassifyArgs, proto: &R) -> Result<(), CliError> {
    let cfg = model_config(args.m, args.common.precision)?;
    let r0 = parse_real(proto, "r0", &args.r0)?;
    let p0 = parse_real(proto, "p0", &args.p0)?;
    let law = GeometricTypeLaw::new(r0, p0)?;
    let rep = classify(&law, &cfg, args.budget, args.delta)?;
    let digits = sig_digits(args.common.precision);

    let opt = |x: &Option<R>| -> serde_json::Value {
        match x {
            Some(v) => serde_json::json!({
                "value": v.to_f64(),
                "repr": fmt(v, digits),
            }),
            None => serde_json::Value::Null,
        }
    };
    let report = serde_json::json!({
        "regime": rep.regime.to_string(),
        "r_star": opt(&rep.r_star),
        "p_star": opt(&rep.p_star),
        "gamma_star": opt(&rep.gamma_star),
        "free_energy": rep.free_energy.as_ref().map(|fe| serde_json::json!({
            "value": fe.value.value.to_f64(),
            "log": fe.value.log.to_f64(),
            "repr": fmt(&fe.value.value, digits),
            "form1_log": fe.form1_log.to_f64(),
            "forms_rel_diff": fe.forms_rel_diff,
        })),
        "K": opt(&rep.k_const),
        "Q": rep.q_const.as_ref().map(|q| serde_json::json!({
            "value": q.value.to_f64(),
            "repr": fmt(&q.value, digits),
            "tail_bound": q.tail_bound.to_f64(),
        })),
        "iterations_used": rep.iterations_used,
        "diagnostics": {
            "final_r": rep.diagnostics.final_r.to_f64(),
            "final_survival": rep.diagnostics.final_survival.to_f64(),
            "last_rel_step": rep.diagnostics.last_rel_step,
            "crossed_below_at": rep.diagnostics.crossed_below_at,
        },
    });
    let manifest = RunManifest::new("classify", args.common.precision)
        .param("m", args.m)
        .param("r0", &args.r0)
        .param("p0", &args.p0)
        .param("budget", args.budget)
        .param("delta", args.delta);
    let payload = json_with_manifest(&report, manifest);
    Sink::from_out(&args.common.out).write(
        &payload,
        &RunManifest::new("classify", args.common.precision),
    )?;
    Ok(())
}

// --------------------------------------------------------- critical-locate

fn cmd_critical_locate(args: &LocateArgs, proto: Proto) -> Result<(), CliError> {
    match proto {
        Proto::Std(p) => locate_impl(args, &p),
        Proto::Ext(p) => locate_impl(args, &p),
    }
}

fn locate_impl<R: Real>(args: &LocateArgs, proto: &R) -> Result<(), CliError> {
    let cfg = model_config(args.m, args.common.precision)?;
    let r0 = parse_real(proto, "r0", &args.r0)?;
    let params = LocateParams {
        p_lo: args.p_lo,
        p_hi: args.p_hi,
        delta: args.delta,
        initial_probe_budget: args.initial_probe_budget,
        max_probe_budget: args.max_probe_budget,
    };
    let res = critical_locate(&r0, &cfg, args.tol, &params)?;
    let digits = sig_digits(args.common.precision);
    let report = serde_json::json!({
        "r0": res.r0.to_f64(),
        "p0_critical": res.p0_critical.to_f64(),
        "p0_critical_repr": fmt(&res.p0_critical, digits),
        "p0_best": res.p0_best.to_f64(),
        "p0_best_repr": fmt(&res.p0_best, digits),
        "bracket_lo_repr": fmt(&res.bracket_lo, digits),
        "bracket_hi_repr": fmt(&res.bracket_hi, digits),
        "bracket_width": res.bracket_width,
        "requested_tol": res.requested_tol,
        "tol_achieved": res.tol_achieved,
        "monotonicity_violations": res.monotonicity_violations,
        "probes": res.probes,
        "total_steps": res.total_steps,
        "final_probe_budget": res.final_probe_budget,
    });
    let manifest = RunManifest::new("critical-locate", args.common.precision)
        .param("m", args.m)
        .param("r0", &args.r0)
        .param("tol", args.tol)
        .param("p_lo", args.p_lo)
        .param("p_hi", args.p_hi)
        .param("delta", args.delta)
        .param("initial_probe_budget", args.initial_probe_budget)
        .param("max_probe_budget", args.max_probe_budget);
    let payload = json_with_manifest(&report, manifest);
    Sink::from_out(&args.common.out).write(
        &payload,
        &RunManifest::new("critical-locate", args.common.precision),
    )?;
    Ok(())
}

// ---------------------------------------------------------------- phase-scan

fn cmd_phase_scan(args: &PhaseScanArgs) -> Result<(), CliError> {
    let cfg = model_config(args.m, args.common.precision)?;
    let r_grid = GridSpec {
        min: args.r0_min,
        max: args.r0_max,
        cells: args.r0_cells,
    };
    let p_grid = GridSpec {
        min: args.p0_min,
        max: args.p0_max,
        cells: args.p0_cells,
    };
    let cells = phase_scan(&cfg, &r_grid, &p_grid, args.budget, args.delta, &0f64)?;
    let digits = sig_digits(Precision::Standard);
    let mut csv = Csv::new(&["r0", "p0", "regime", "r_star", "iterations"]);
    for cell in &cells {
        let r_star = cell.report.r_star.unwrap_or(f64::NAN);
        csv.row(&[
            fmt(&cell.r0, digits),
            fmt(&cell.p0, digits),
            cell.report.regime.code().to_string(),
            fmt(&r_star, digits),
            cell.report.iterations_used.to_string(),
        ]);
    }
    let payload = csv.into_bytes();
    let manifest = RunManifest::new("phase-scan", args.common.precision)
        .param("m", args.m)
        .param("r0_min", args.r0_min)
        .param("r0_max", args.r0_max)
        .param("r0_cells", args.r0_cells)
        .param("p0_min", args.p0_min)
        .param("p0_max", args.p0_max)
        .param("p0_cells", args.p0_cells)
        .param("budget", args.budget)
        .param("delta", args.delta)
        .seal(&payload);
    Sink::from_out(&args.common.out).write(&payload, &manifest)?;
    Ok(())
}

// ---------------------------------------------------------------- expand

fn cmd_expand(args: &ExpandArgs, proto: Proto) -> Result<(), CliError> {
    match proto {
        Proto::Std(p) => expand_impl(args, &p),
        Proto::Ext(p) => expand_impl(args, &p),
    }
}

fn expand_impl<R: Real>(args: &ExpandArgs, proto: &R) -> Result<(), CliError> {
    let cfg = model_config(args.m, args.common.precision)?;
    let r0 = parse_real(proto, "r0", &args.r0)?;
    let p0 = parse_real(proto, "p0", &args.p0)?;
    let law = GeometricTypeLaw::new(r0.clone(), p0.clone())?;
    let traj: Trajectory<R> = iterate(&law, &cfg, args.n_max)?;
    let m = traj.m().clone();
    let digits = sig_digits(args.common.precision);
    let nan = proto.lit(f64::NAN);

    // Resolve the regime and its constants.
    let resolved = match args.regime {
        RegimeArg::Auto => {
            let rep = classify(&law, &cfg, args.budget, 1e-9)?;
            match rep.regime {
                Regime::Supercritical => {
                    let fe = rep.free_energy.as_ref().unwrap();
                    RegimeConstants::Supercritical {
                        f_log: fe.value.log.clone(),
                        q: rep.q_const.as_ref().unwrap().value.clone(),
                        p0_over_r0: p0.clone() / &r0,
                    }
                }
                Regime::Subcritical => RegimeConstants::Subcritical {
                    r_star: rep.r_star.clone().unwrap(),
                    k: rep.k_const.clone().unwrap(),
                },
                Regime::NearCriticalUndetermined => RegimeConstants::Critical,
            }
        }
        RegimeArg::Critical => RegimeConstants::Critical,
        RegimeArg::Supercritical => {
            let rep = classify(&law, &cfg, args.budget, 1e-9)?;
            let fe = rep.free_energy.as_ref().ok_or(DrError::RegimeMismatch {
                op: "expand",
                expected: "supercritical",
                actual: rep.regime.to_string(),
            })?;
            if rep.regime != Regime::Supercritical {
                return Err(DrError::RegimeMismatch {
                    op: "expand",
                    expected: "supercritical",
                    actual: rep.regime.to_string(),
                }
                .into());
            }
            RegimeConstants::Supercritical {
                f_log: fe.value.log.clone(),
                q: rep.q_const.as_ref().unwrap().value.clone(),
                p0_over_r0: p0.clone() / &r0,
            }
        }
        RegimeArg::Subcritical => {
            let rep = classify(&law, &cfg, args.budget, 1e-9)?;
            if rep.regime != Regime::Subcritical {
                return Err(DrError::RegimeMismatch {
                    op: "expand",
                    expected: "subcritical",
                    actual: rep.regime.to_string(),
                }
                .into());
            }
            RegimeConstants::Subcritical {
                r_star: rep.r_star.clone().unwrap(),
                k: rep.k_const.clone().unwrap(),
            }
        }
    };

    let s_val = args.s.map(|s| proto.lit(s));
    let (r_rows, p_rows) = compare_expansions(&traj, &resolved)?;

    let header = [
        "n",
        "r_exact",
        "r_pred",
        "r_abs_residual",
        "r_norm_residual",
        "p_exact",
        "p_pred",
        "p_abs_residual",
        "p_norm_residual",
        "n_v_n",
        "estimator",
        "survival_pred",
        "mean_pred",
        "pgf_pred",
        "pgf_at_m_pred",
    ];
    let mut csv = Csv::new(&header);
    // offset between trajectory index and comparison rows (critical rows
    // start at n = 2)
    let row_offset = traj.len() - r_rows.len();
    for (i, rrow) in r_rows.iter().enumerate() {
        let n = rrow.n;
        let rec = traj.record(i + row_offset);
        debug_assert_eq!(rec.n, n);
        let prow = &p_rows[i];
        let v = rec.v(&m);
        let n_v_n = v.clone() * v.lit(n as f64);
        // regime-specific estimator column: p/(n r) (supercritical),
        // (r_n - r_*)/gamma^n (subcritical), n v_n m/2 (critical)
        let estimator = match &resolved {
            RegimeConstants::Supercritical { .. } => {
                if n == 0 {
                    nan.clone()
                } else {
                    rec.p_over_r() / v.lit(n as f64)
                }
            }
            RegimeConstants::Subcritical { r_star, .. } => {
                let g = m.clone() * (m.lit(1.0) - r_star);
                (rec.r().clone() - r_star) / g.powi(n as i64)
            }
            RegimeConstants::Critical => n_v_n.clone() * &m / m.lit(2.0),
        };
        let cor = if matches!(&resolved, RegimeConstants::Critical) && n < 2 {
            None
        } else {
            Some(corollary_values(&resolved, n, &m, s_val.as_ref())?)
        };
        let (surv, mean, pgf, pgf_m) = match cor {
            Some(c) => (
                c.survival_pred,
                c.mean_pred,
                c.pgf_pred.unwrap_or_else(|| nan.clone()),
                c.pgf_at_m_pred.unwrap_or_else(|| nan.clone()),
            ),
            None => (nan.clone(), nan.clone(), nan.clone(), nan.clone()),
        };
        csv.row(&[
            n.to_string(),
            fmt(&proto.lit(rrow.exact), digits),
            fmt(&proto.lit(rrow.predicted), digits),
            fmt(&proto.lit(rrow.abs_residual), digits),
            fmt(&proto.lit(rrow.normalized_residual), digits),
            fmt(&proto.lit(prow.exact), digits),
            fmt(&proto.lit(prow.predicted), digits),
            fmt(&proto.lit(prow.abs_residual), digits),
            fmt(&proto.lit(prow.normalized_residual), digits),
            fmt(&n_v_n, digits),
            fmt(&estimator, digits),
            fmt(&surv, digits),
            fmt(&mean, digits),
            fmt(&pgf, digits),
            fmt(&pgf_m, digits),
        ]);
    }
    let payload = csv.into_bytes();
    let manifest = RunManifest::new("expand", args.common.precision)
        .param("m", args.m)
        .param("r0", &args.r0)
        .param("p0", &args.p0)
        .param("n_max", args.n_max)
        .param(
            "regime",
            match args.regime {
                RegimeArg::Auto => "auto",
                RegimeArg::Supercritical => "supercritical",
                RegimeArg::Subcritical => "subcritical",
                RegimeArg::Critical => "critical",
            },
        )
        .param("s", args.s.map(|s| s.to_string()).unwrap_or_default())
        .param("budget", args.budget)
        .seal(&payload);
    Sink::from_out(&args.common.out).write(&payload, &manifest)?;
    Ok(())
}

// ---------------------------------------------------------------- mc

fn cmd_mc(args: &McArgs) -> Result<(), CliError> {
    let cfg = model_config(args.m, args.common.precision)?;
    let law = GeometricTypeLaw::new(args.r0, args.p0)?;
    let mc = McConfig {
        seed: args.seed,
        samples: args.samples,
        depth: args.depth,
        node_budget: args.node_budget,
    };
    let summary = mc_sample(&law, &cfg, &mc)?;
    let digits = sig_digits(Precision::Standard);
    let manifest = RunManifest::new("mc", args.common.precision)
        .param("m", args.m)
        .param("r0", args.r0)
        .param("p0", args.p0)
        .param("depth", args.depth)
        .param("samples", args.samples)
        .param("node_budget", args.node_budget)
        .seed(args.seed);
    let sink = Sink::from_out(&args.common.out);
    match args.format {
        Format::Csv => {
            let mut csv = Csv::new(&["key", "value"]);
            csv.row(&["samples".into(), summary.samples.to_string()]);
            csv.row(&["depth".into(), args.depth.to_string()]);
            csv.row(&["mean".into(), fmt(&summary.mean, digits)]);
            csv.row(&["sample_sd".into(), fmt(&summary.sample_sd, digits)]);
            csv.row(&["se_mean".into(), fmt(&summary.se_mean, digits)]);
            csv.row(&["survival_freq".into(), fmt(&summary.survival_freq, digits)]);
            csv.row(&["se_survival".into(), fmt(&summary.se_survival, digits)]);
            for (v, c) in summary.counts.iter().enumerate() {
                csv.row(&[format!("count_{v}"), c.to_string()]);
            }
            for (k, f) in summary.conditional_pmf.iter().enumerate() {
                csv.row(&[format!("cond_pmf_{}", k + 1), fmt(f, digits)]);
            }
            let payload = csv.into_bytes();
            let manifest = manifest.seal(&payload);
            sink.write(&payload, &manifest)?;
        }
        Format::Json => {
            let payload = json_with_manifest(&summary, manifest);
            sink.write(&payload, &RunManifest::new("mc", args.common.precision))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------- propagate-pmf

fn cmd_propagate_pmf(args: &PropagatePmfArgs) -> Result<(), CliError> {
    let cfg = model_config(args.m, args.common.precision)?;
    let law0 = GeometricTypeLaw::new(args.r0, args.p0)?;
    let traj = iterate(&law0, &cfg, args.steps)?;
    let digits = sig_digits(Precision::Standard);
    let mut pmf = TruncatedPmf::from_law(&law0, args.tol)?;
    let mut csv = Csv::new(&[
        "step",
        "tv_vs_closed_form",
        "support",
        "tail_bound",
        "mass_sum",
    ]);
    csv.row(&[
        "0".into(),
        fmt(&0.0, digits),
        pmf.support_len().to_string(),
        fmt(&pmf.tail_bound, digits),
        fmt(&pmf.mass_sum(), digits),
    ]);
    for k in 1..=args.steps {
        pmf = propagate_pmf(&pmf, args.m, args.tol, &PropagateOptions::default())?;
        let closed = TruncatedPmf::from_law(&traj.record(k as usize).law, args.tol)?;
        let tv = tv_distance(&pmf, &closed);
        csv.row(&[
            k.to_string(),
            fmt(&tv, digits),
            pmf.support_len().to_string(),
            fmt(&pmf.tail_bound, digits),
            fmt(&pmf.mass_sum(), digits),
        ]);
    }
    let payload = csv.into_bytes();
    let manifest = RunManifest::new("propagate-pmf", args.common.precision)
        .param("m", args.m)
        .param("r0", args.r0)
        .param("p0", args.p0)
        .param("steps", args.steps)
        .param("tol", args.tol)
        .seal(&payload);
    Sink::from_out(&args.common.out).write(&payload, &manifest)?;
    Ok(())
}

// ------------------------------------------------------------ exp-variant

fn cmd_exp_variant(args: &ExpVariantArgs) -> Result<(), CliError> {
    let mut cfg = ExpVariantConfig::new(args.m)?;
    if let Some(alpha) = args.alpha {
        cfg = cfg.with_alpha(alpha)?;
    }
    let law0 = ExponentialTypeLaw::new(args.lambda0, args.p0)?;
    let laws = exp_iterate(&law0, &cfg, args.steps, ModelConfig::DEFAULT_MAX_STEPS)?;
    let digits = sig_digits(Precision::Standard);
    let mut csv = Csv::new(&["n", "lambda", "p", "mean"]);
    for (n, law) in laws.iter().enumerate() {
        csv.row(&[
            n.to_string(),
            fmt(&law.lambda, digits),
            fmt(&law.p, digits),
            fmt(&law.mean(), digits),
        ]);
    }
    let payload = csv.into_bytes();
    let manifest = RunManifest::new("exp-variant", args.common.precision)
        .param("m", args.m)
        .param("alpha", cfg.alpha)
        .param("lambda0", args.lambda0)
        .param("p0", args.p0)
        .param("steps", args.steps)
        .seal(&payload);
    Sink::from_out(&args.common.out).write(&payload, &manifest)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use drlab::recursion::step;

    #[test]
    fn precision_parser() {
        assert_eq!(parse_precision("standard").unwrap(), Precision::Standard);
        assert_eq!(
            parse_precision("extended:50").unwrap(),
            Precision::Extended { digits: 50 }
        );
        assert!(parse_precision("extended:10").is_err());
        assert!(parse_precision("quad").is_err());
    }

    #[test]
    fn step_sanity_for_wiring() {
        // guards against wiring the wrong law into the iterate command
        let cfg = ModelConfig::new(2.0).unwrap();
        let law = GeometricTypeLaw::new(0.5f64, 0.5).unwrap();
        let next = step(&law, &cfg);
        assert!((next.r() - 1.0 / 3.0).abs() < 1e-15);
    }
}
