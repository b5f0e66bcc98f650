//! Command-line front end.
//!
//! JSON commands print one object to stdout; CSV commands print a header row
//! followed by one record per line. Exit codes: 0 success, 1 oracle threshold
//! exceeded, 2 usage error, 3 non-convergence.

use std::fmt::Write as _;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::analytic;
use crate::dynamics::{ConsensusControl, DEFAULT_MAX_STEPS, DEFAULT_TOLERANCE};
use crate::er_graph::{ModelParams, MAX_ENUMERATION_NODES};
use crate::error::Error;
use crate::exec::{with_threads, Execution};
use crate::montecarlo::{
    factor_sweep, run_ensemble, sweep_fixed_degree, ExperimentConfig, InitialCondition,
    NonConvergencePolicy, SweepConfig, DEFAULT_REPS,
};
use crate::spectral_oracle;

pub const SCHEMA_VERSION: &str = "1";
pub const ORACLE_THRESHOLD: f64 = 1e-10;
pub const FIG1_HEADER: &str = "n,p,analytic_variance,empirical_variance,stderr";
pub const FIG2_HEADER: &str = "c,n,factor";

#[derive(Debug, Parser)]
#[command(name = "er-consensus", version, about = "Consensus-value moments over random directed graphs")]
pub struct Cli {
    /// Worker threads for simulations (0 = one per core).
    #[arg(long, global = true, env = "CONSENSUS_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form mean and variance of the consensus value.
    Analytic(AnalyticArgs),
    /// Monte Carlo ensemble next to the closed form.
    Simulate(SimulateArgs),
    /// Variance versus n at fixed expected degree c (CSV).
    Fig1(Fig1Args),
    /// Variance factor n(1-ρ)/δ versus n for several c (CSV).
    Fig2(Fig2Args),
    /// Compare closed forms against exhaustive enumeration.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct AnalyticArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub p: f64,
    /// `ramp`, `const:<v>`, or a comma-separated vector.
    #[arg(long, default_value = "ramp", allow_hyphen_values = true)]
    pub x0: InitialCondition,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    pub max_steps: u64,
    /// Drop non-converged runs instead of aborting.
    #[arg(long)]
    pub drop_nonconverged: bool,
}

impl ConvergenceArgs {
    fn control(&self) -> Result<ConsensusControl, CliError> {
        let control = ConsensusControl {
            tol: self.tol,
            max_steps: self.max_steps,
        };
        control.validate().map_err(|e| match e {
            Error::InvalidTolerance(_) => CliError::usage("--tol", e),
            _ => CliError::usage("--max-steps", e),
        })?;
        Ok(control)
    }

    fn policy(&self) -> NonConvergencePolicy {
        if self.drop_nonconverged {
            NonConvergencePolicy::Drop
        } else {
            NonConvergencePolicy::Abort
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub p: f64,
    #[arg(long, default_value = "ramp", allow_hyphen_values = true)]
    pub x0: InitialCondition,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub convergence: ConvergenceArgs,
}

#[derive(Debug, Args)]
pub struct Fig1Args {
    #[arg(long, default_value_t = 5.0)]
    pub c: f64,
    #[arg(long, default_value_t = 5)]
    pub n_min: usize,
    #[arg(long, default_value_t = 50)]
    pub n_max: usize,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "ramp", allow_hyphen_values = true)]
    pub x0: InitialCondition,
    #[command(flatten)]
    pub convergence: ConvergenceArgs,
    /// Print a gnuplot script with the data inlined instead of bare CSV.
    #[arg(long)]
    pub gnuplot: bool,
}

#[derive(Debug, Args)]
pub struct Fig2Args {
    #[arg(long, value_delimiter = ',', default_value = "5,6,7,8,9,10")]
    pub c: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub n_min: usize,
    #[arg(long, default_value_t = 70)]
    pub n_max: usize,
    #[arg(long)]
    pub gnuplot: bool,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub p: f64,
    #[arg(long, default_value = "ramp", allow_hyphen_values = true)]
    pub x0: InitialCondition,
    /// Permit n = 5 (2^20 graphs).
    #[arg(long)]
    pub allow_large: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Usage(String),
    NonConvergence(String),
}

impl CliError {
    fn usage(flag: &str, err: impl std::fmt::Display) -> Self {
        CliError::Usage(format!("invalid {flag}: {err}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::NonConvergence(_) => 3,
        }
    }

    fn from_run(err: Error) -> Self {
        match err {
            Error::NotConverged { .. } | Error::EnsembleNotConverged { .. } | Error::EigenNotConverged { .. } => {
                CliError::NonConvergence(err.to_string())
            }
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::NonConvergence(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

/// What a successful invocation prints and returns.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub stdout: String,
    pub exit_code: i32,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self {
            stdout,
            exit_code: 0,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Serialize)]
pub struct OutputRecord {
    pub schema_version: &'static str,
    pub command: &'static str,
    pub params: Value,
    pub results: Value,
    pub provenance: Provenance,
}

impl OutputRecord {
    fn new(command: &'static str, params: Value, results: Value, seed: Option<u64>) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            schema_version: SCHEMA_VERSION,
            command,
            params,
            results,
            provenance: Provenance { seed, timestamp },
        }
    }

    fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("record serializes");
        s.push('\n');
        s
    }
}

/// Round-trip-safe rendering with 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn model_params(n: usize, p: f64) -> Result<ModelParams, CliError> {
    ModelParams::new(n, p).map_err(|e| match e {
        Error::TooFewNodes(_) => CliError::usage("--n", e),
        _ => CliError::usage("--p", e),
    })
}

fn resolve_x0(x0: &InitialCondition, n: usize) -> Result<crate::StateVector, CliError> {
    x0.resolve(n).map_err(|e| CliError::usage("--x0", e))
}

pub fn cmd_analytic(args: &AnalyticArgs) -> Result<Outcome, CliError> {
    let params = model_params(args.n, args.p)?;
    let x0 = resolve_x0(&args.x0, args.n)?;
    let r = analytic::consensus_variance(params, &x0).map_err(CliError::from_run)?;
    let record = OutputRecord::new(
        "analytic",
        json!({ "n": args.n, "p": args.p, "x0": args.x0.to_string() }),
        json!({
            "mean": r.mean,
            "variance": r.variance,
            "rho": r.rho,
            "delta": r.delta,
            "factor": r.factor,
        }),
        None,
    );
    Ok(Outcome::ok(record.to_json()))
}

fn z_score(estimate: f64, reference: f64, stderr: f64) -> f64 {
    let diff = estimate - reference;
    if diff == 0.0 {
        0.0
    } else {
        diff / stderr
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Outcome, CliError> {
    let params = model_params(args.n, args.p)?;
    let x0 = resolve_x0(&args.x0, args.n)?;
    if args.reps == 0 {
        return Err(CliError::usage("--reps", Error::ZeroReplications));
    }
    let control = args.convergence.control()?;
    let analytic = analytic::consensus_variance(params, &x0).map_err(CliError::from_run)?;
    let cfg = ExperimentConfig {
        params,
        x0: args.x0.clone(),
        reps: args.reps,
        seed: args.seed,
        control,
        policy: args.convergence.policy(),
    };
    let stats = run_ensemble(&cfg).map_err(CliError::from_run)?;
    let record = OutputRecord::new(
        "simulate",
        json!({
            "n": args.n,
            "p": args.p,
            "x0": args.x0.to_string(),
            "reps": args.reps,
            "seed": args.seed,
            "tol": control.tol,
            "max_steps": control.max_steps,
        }),
        json!({
            "analytic_mean": analytic.mean,
            "analytic_variance": analytic.variance,
            "empirical_mean": stats.mean,
            "empirical_variance": stats.variance,
            "stderr_mean": stats.stderr_mean,
            "stderr_variance": stats.stderr_variance,
            "z_mean": z_score(stats.mean, analytic.mean, stats.stderr_mean),
            "z_variance": z_score(stats.variance, analytic.variance, stats.stderr_variance),
            "reps_used": stats.reps_used,
            "nonconverged": stats.nonconverged,
        }),
        Some(args.seed),
    );
    Ok(Outcome::ok(record.to_json()))
}

fn sizes(n_min: usize, n_max: usize, c: f64) -> Result<std::ops::RangeInclusive<usize>, CliError> {
    if n_min < 2 {
        return Err(CliError::Usage(format!("invalid --n-min: must be at least 2, got {n_min}")));
    }
    if n_max < n_min {
        return Err(CliError::Usage(format!(
            "invalid --n-max: {n_max} is below --n-min {n_min}"
        )));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(CliError::Usage(format!("invalid --c: must be positive, got {c}")));
    }
    if (n_min as f64) < c {
        return Err(CliError::Usage(format!(
            "invalid --n-min: {n_min} is below --c {c}"
        )));
    }
    Ok(n_min..=n_max)
}

/// Sweep data: closed-form and empirical variance for `n` in range, `p = c/n`.
pub fn fig1_csv(args: &Fig1Args, exec: Execution) -> Result<String, CliError> {
    let range = sizes(args.n_min, args.n_max, args.c)?;
    if args.reps == 0 {
        return Err(CliError::usage("--reps", Error::ZeroReplications));
    }
    let cfg = SweepConfig {
        reps: args.reps,
        seed: args.seed,
        x0: args.x0.clone(),
        control: args.convergence.control()?,
        policy: args.convergence.policy(),
    };
    for n in range.clone() {
        resolve_x0(&args.x0, n)?;
    }
    let rows = sweep_fixed_degree(args.c, range, &cfg, exec).map_err(CliError::from_run)?;
    let mut out = String::new();
    out.push_str(FIG1_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.n,
            fmt_real(r.p),
            fmt_real(r.analytic_variance),
            fmt_real(r.empirical.variance),
            fmt_real(r.empirical.stderr_variance),
        );
    }
    Ok(out)
}

pub fn fig2_csv(args: &Fig2Args) -> Result<String, CliError> {
    if args.c.is_empty() {
        return Err(CliError::Usage("invalid --c: empty list".into()));
    }
    for &c in &args.c {
        let lo = args.n_min.max(c.ceil() as usize);
        if args.n_min < 2 || !(c > 0.0 && c.is_finite()) || lo > args.n_max {
            return Err(CliError::Usage(format!(
                "invalid --c/--n-min/--n-max: no sizes in [{}, {}] with n >= {c}",
                args.n_min, args.n_max
            )));
        }
    }
    let rows = factor_sweep(&args.c, args.n_min..=args.n_max).map_err(CliError::from_run)?;
    let mut out = String::new();
    out.push_str(FIG2_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.c, r.n, fmt_real(r.factor));
    }
    Ok(out)
}

fn gnuplot_script(csv: &str, title: &str, plot: &str) -> String {
    format!(
        "set datafile separator ','\nset key autotitle columnhead\nset title '{title}'\nset xlabel 'n'\n$data << EOD\n{csv}EOD\n{plot}\n"
    )
}

pub fn cmd_fig1(args: &Fig1Args) -> Result<Outcome, CliError> {
    let csv = fig1_csv(args, Execution::Parallel)?;
    if args.gnuplot {
        let plot = "plot $data using 1:3 with lines, $data using 1:4:5 with yerrorbars";
        return Ok(Outcome::ok(gnuplot_script(
            &csv,
            &format!("variance of x*, c = {}", args.c),
            plot,
        )));
    }
    Ok(Outcome::ok(csv))
}

pub fn cmd_fig2(args: &Fig2Args) -> Result<Outcome, CliError> {
    let csv = fig2_csv(args)?;
    if args.gnuplot {
        let plot = "plot for [k=1:words(C)] $data using 2:($1 == word(C, k) + 0 ? $3 : 1/0) with lines title 'c = '.word(C, k)";
        let cs: Vec<String> = args.c.iter().map(|c| c.to_string()).collect();
        let script = gnuplot_script(&csv, "n(1-rho)/delta", plot);
        return Ok(Outcome::ok(format!("C = '{}'\n{script}", cs.join(" "))));
    }
    Ok(Outcome::ok(csv))
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<Outcome, CliError> {
    let limit = if args.allow_large {
        MAX_ENUMERATION_NODES
    } else {
        MAX_ENUMERATION_NODES - 1
    };
    if args.n > limit {
        return Err(CliError::Usage(format!(
            "invalid --n: enumeration supports n <= {limit}{}",
            if args.allow_large { "" } else { " (n = 5 with --allow-large)" }
        )));
    }
    let params = model_params(args.n, args.p)?;
    let x0 = resolve_x0(&args.x0, args.n)?;
    let report = spectral_oracle::oracle_report(params, &x0).map_err(CliError::from_run)?;
    let pass = report.max_abs_discrepancy <= ORACLE_THRESHOLD;
    let record = OutputRecord::new(
        "oracle",
        json!({ "n": args.n, "p": args.p, "x0": args.x0.to_string() }),
        json!({
            "discrepancies": report.discrepancies,
            "max_abs_discrepancy": report.max_abs_discrepancy,
            "exact_variance": report.exact_variance,
            "closed_form_variance": report.closed_form_variance,
            "eigenvector_residual": report.exact_eigenvector.residual,
            "threshold": ORACLE_THRESHOLD,
            "pass": pass,
        }),
        None,
    );
    Ok(Outcome {
        stdout: record.to_json(),
        exit_code: if pass { 0 } else { 1 },
    })
}

/// Runs a parsed command on a pool sized by `--threads`.
pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    with_threads(cli.threads, || match &cli.command {
        Command::Analytic(a) => cmd_analytic(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fig1(a) => cmd_fig1(a),
        Command::Fig2(a) => cmd_fig2(a),
        Command::Oracle(a) => cmd_oracle(a),
    })
}
