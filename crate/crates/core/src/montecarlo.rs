//! Ensemble runs of the averaging dynamics and sweeps at fixed expected degree.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::Serialize;

use crate::analytic;
use crate::dynamics::{run_with_sampler, ConsensusControl, StateVector};
use crate::er_graph::{GraphSampler, GraphSeed, ModelParams};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::stats::summarize;

pub const DEFAULT_REPS: usize = 2000;

/// How initial states are chosen for a network of size `n`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// `x_i(0) = i / n`
    Ramp,
    Constant(f64),
    Explicit(Vec<f64>),
}

impl InitialCondition {
    pub fn resolve(&self, n: usize) -> Result<StateVector> {
        match self {
            InitialCondition::Ramp => Ok(StateVector::ramp(n)),
            InitialCondition::Constant(c) => Ok(StateVector::constant(n, *c)),
            InitialCondition::Explicit(v) if v.len() == n => Ok(StateVector::new(v.clone())),
            InitialCondition::Explicit(v) => Err(Error::InvalidInitialCondition(format!(
                "explicit vector has {} entries but n = {n}",
                v.len()
            ))),
        }
    }
}

/// Accepts `ramp`, `const:<v>`, or a comma-separated list of numbers.
impl FromStr for InitialCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "ramp" {
            return Ok(InitialCondition::Ramp);
        }
        let parse = |t: &str| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::InvalidInitialCondition(format!("not a finite number: {t:?}")))
        };
        if let Some(v) = s.strip_prefix("const:") {
            return parse(v).map(InitialCondition::Constant);
        }
        s.split(',')
            .map(parse)
            .collect::<Result<Vec<_>>>()
            .map(InitialCondition::Explicit)
    }
}

impl fmt::Display for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialCondition::Ramp => f.write_str("ramp"),
            InitialCondition::Constant(c) => write!(f, "const:{c}"),
            InitialCondition::Explicit(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum NonConvergencePolicy {
    /// Fail the whole experiment.
    #[default]
    Abort,
    /// Exclude the run and count it in [`EnsembleStats::nonconverged`].
    Drop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub params: ModelParams,
    pub x0: InitialCondition,
    pub reps: usize,
    pub seed: u64,
    pub control: ConsensusControl,
    pub policy: NonConvergencePolicy,
}

impl ExperimentConfig {
    pub fn new(params: ModelParams, x0: InitialCondition, reps: usize, seed: u64) -> Self {
        Self {
            params,
            x0,
            reps,
            seed,
            control: ConsensusControl::default(),
            policy: NonConvergencePolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub mean: f64,
    /// Unbiased sample variance of the consensus values.
    pub variance: f64,
    pub stderr_mean: f64,
    /// Jackknife standard error of `variance`.
    pub stderr_variance: f64,
    pub reps_used: usize,
    pub nonconverged: usize,
}

/// Runs `cfg.reps` independent consensus runs; replication `r` draws from
/// stream `r` of the seed, so results do not depend on scheduling.
pub fn run_ensemble(cfg: &ExperimentConfig) -> Result<EnsembleStats> {
    run_ensemble_with(cfg, Execution::default())
}

pub fn run_ensemble_with(cfg: &ExperimentConfig, exec: Execution) -> Result<EnsembleStats> {
    if cfg.reps == 0 {
        return Err(Error::ZeroReplications);
    }
    cfg.control.validate()?;
    let x0 = cfg.x0.resolve(cfg.params.n())?;
    let sampler = GraphSampler::new(cfg.params);
    let base = GraphSeed::new(cfg.seed);

    let outcomes = exec.map(cfg.reps, |r| {
        let mut rng = base.with_stream(r as u64).rng();
        run_with_sampler(&sampler, &x0, &mut rng, cfg.control)
    });

    let mut values = Vec::with_capacity(cfg.reps);
    let mut failed = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => values.push(o.value),
            Err(Error::NotConverged { .. }) => failed.push(r),
            Err(e) => return Err(e),
        }
    }
    if !failed.is_empty() && (cfg.policy == NonConvergencePolicy::Abort || values.is_empty()) {
        return Err(Error::EnsembleNotConverged {
            count: failed.len(),
            reps: cfg.reps,
            first: failed.iter().copied().take(10).collect(),
        });
    }

    let s = summarize(&values);
    Ok(EnsembleStats {
        mean: s.mean,
        variance: s.variance,
        stderr_mean: s.stderr_mean,
        stderr_variance: s.stderr_variance,
        reps_used: s.count,
        nonconverged: failed.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub p: f64,
    pub analytic_variance: f64,
    pub analytic_mean: f64,
    pub empirical: EnsembleStats,
}

/// Settings shared by every row of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub reps: usize,
    pub seed: u64,
    pub x0: InitialCondition,
    pub control: ConsensusControl,
    pub policy: NonConvergencePolicy,
}

impl SweepConfig {
    pub fn new(reps: usize, seed: u64, x0: InitialCondition) -> Self {
        Self {
            reps,
            seed,
            x0,
            control: ConsensusControl::default(),
            policy: NonConvergencePolicy::default(),
        }
    }
}

fn check_degree_range(c: f64, sizes: &RangeInclusive<usize>) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidRange(format!("expected degree must be positive, got {c}")));
    }
    if sizes.is_empty() {
        return Err(Error::InvalidRange(format!("empty size range {sizes:?}")));
    }
    if (*sizes.start() as f64) < c {
        return Err(Error::InvalidRange(format!(
            "smallest size {} is below c = {c}, giving p > 1",
            sizes.start()
        )));
    }
    Ok(())
}

/// One row per `n` with `p = c/n`: closed-form variance next to the ensemble
/// estimate. Row seeds are derived from `cfg.seed` and `n`.
pub fn sweep_fixed_degree(
    c: f64,
    sizes: RangeInclusive<usize>,
    cfg: &SweepConfig,
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    check_degree_range(c, &sizes)?;
    sizes
        .map(|n| {
            let params = ModelParams::with_degree(n, c)?;
            let x0 = cfg.x0.resolve(n)?;
            let analytic = analytic::consensus_variance(params, &x0)?;
            let experiment = ExperimentConfig {
                params,
                x0: cfg.x0.clone(),
                reps: cfg.reps,
                seed: GraphSeed::new(cfg.seed).derive(n as u64).seed,
                control: cfg.control,
                policy: cfg.policy,
            };
            Ok(SweepRow {
                n,
                p: params.p(),
                analytic_variance: analytic.variance,
                analytic_mean: analytic.mean,
                empirical: run_ensemble_with(&experiment, exec)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FactorRow {
    pub c: f64,
    pub n: usize,
    pub factor: f64,
}

/// `n(1 - ρ)/δ` at `p = c/n` for each `c` and `n`; no simulation. Each curve
/// starts at the larger of `sizes.start()` and `⌈c⌉`.
pub fn factor_sweep(c_list: &[f64], sizes: RangeInclusive<usize>) -> Result<Vec<FactorRow>> {
    let mut rows = Vec::new();
    for &c in c_list {
        let curve = clamp_to_degree(c, &sizes)?;
        for n in curve {
            rows.push(FactorRow {
                c,
                n,
                factor: analytic::variance_factor(ModelParams::with_degree(n, c)?),
            });
        }
    }
    Ok(rows)
}

/// Sizes in `sizes` with `n ≥ c`.
pub fn clamp_to_degree(c: f64, sizes: &RangeInclusive<usize>) -> Result<RangeInclusive<usize>> {
    let start = (*sizes.start()).max(c.ceil() as usize);
    let curve = start..=*sizes.end();
    check_degree_range(c, &curve)?;
    Ok(curve)
}

/// True when the values rise strictly to one maximum and then fall strictly.
pub fn is_single_peaked(values: &[f64]) -> bool {
    let Some(peak) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
    else {
        return false;
    };
    values[..=peak].windows(2).all(|w| w[0] < w[1]) && values[peak..].windows(2).all(|w| w[0] > w[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_condition_grammar() {
        assert_eq!("ramp".parse::<InitialCondition>().unwrap(), InitialCondition::Ramp);
        assert_eq!(
            "const:2.5".parse::<InitialCondition>().unwrap(),
            InitialCondition::Constant(2.5)
        );
        assert_eq!(
            "0, 1,-3e-1".parse::<InitialCondition>().unwrap(),
            InitialCondition::Explicit(vec![0.0, 1.0, -0.3])
        );
        assert!("const:x".parse::<InitialCondition>().is_err());
        assert!("1,,2".parse::<InitialCondition>().is_err());
        assert!("nan".parse::<InitialCondition>().is_err());
        assert!(InitialCondition::Explicit(vec![1.0, 2.0]).resolve(3).is_err());
        assert_eq!(InitialCondition::Constant(0.5).to_string(), "const:0.5");
    }

    #[test]
    fn complete_graph_zero_variance() {
        let cfg = ExperimentConfig::new(
            ModelParams::new(6, 1.0).unwrap(),
            InitialCondition::Ramp,
            10,
            3,
        );
        let s = run_ensemble(&cfg).unwrap();
        assert!(s.variance.abs() < 1e-20);
        assert!((s.mean - StateVector::ramp(6).mean()).abs() < 1e-12);
        assert_eq!(s.reps_used, 10);
        assert_eq!(s.nonconverged, 0);
    }

    #[test]
    fn constant_start_zero_variance() {
        let cfg = ExperimentConfig::new(
            ModelParams::new(7, 0.3).unwrap(),
            InitialCondition::Constant(0.1),
            50,
            3,
        );
        let s = run_ensemble(&cfg).unwrap();
        assert_eq!(s.variance, 0.0);
        assert_eq!(s.mean, 0.1);
    }

    #[test]
    fn n2_variance_within_four_sigma() {
        let cfg = ExperimentConfig::new(
            ModelParams::new(2, 0.5).unwrap(),
            InitialCondition::Explicit(vec![0.0, 1.0]),
            100_000,
            7,
        );
        let s = run_ensemble(&cfg).unwrap();
        assert!((s.variance - 0.05).abs() < 4.0 * s.stderr_variance, "{s:?}");
        assert!((s.mean - 0.5).abs() < 4.0 * s.stderr_mean);
    }

    #[test]
    fn sequential_equals_parallel() {
        let cfg = ExperimentConfig::new(
            ModelParams::new(9, 0.4).unwrap(),
            InitialCondition::Ramp,
            300,
            42,
        );
        let a = run_ensemble_with(&cfg, Execution::Sequential).unwrap();
        let b = crate::exec::with_threads(3, || run_ensemble_with(&cfg, Execution::Parallel)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nonconvergence_policies() {
        let mut cfg = ExperimentConfig::new(
            ModelParams::new(20, 0.05).unwrap(),
            InitialCondition::Ramp,
            20,
            1,
        );
        cfg.control.max_steps = 3;
        match run_ensemble(&cfg) {
            Err(Error::EnsembleNotConverged { count, reps, first }) => {
                assert!(count > 0);
                assert_eq!(reps, 20);
                assert!(!first.is_empty());
            }
            other => panic!("expected failure, got {other:?}"),
        }
        cfg.control.max_steps = 12;
        cfg.policy = NonConvergencePolicy::Drop;
        if let Ok(s) = run_ensemble(&cfg) {
            assert_eq!(s.reps_used + s.nonconverged, 20);
        }
    }

    #[test]
    fn zero_reps_rejected() {
        let cfg = ExperimentConfig::new(
            ModelParams::new(3, 0.5).unwrap(),
            InitialCondition::Ramp,
            0,
            1,
        );
        assert_eq!(run_ensemble(&cfg), Err(Error::ZeroReplications));
    }

    #[test]
    fn sweep_endpoint_zero() {
        let cfg = SweepConfig::new(200, 7, InitialCondition::Ramp);
        let rows = sweep_fixed_degree(5.0, 5..=6, &cfg, Execution::default()).unwrap();
        assert_eq!(rows[0].p, 1.0);
        assert_eq!(rows[0].analytic_variance, 0.0);
        assert_eq!(rows[0].empirical.variance, 0.0);
        assert!(rows[1].analytic_variance > 0.0);
        assert!(sweep_fixed_degree(5.0, 4..=6, &cfg, Execution::default()).is_err());
    }

    #[test]
    fn factor_sweep_shape() {
        let rows = factor_sweep(&[5.0], 5..=70).unwrap();
        assert_eq!(rows[0].factor, 0.0);
        let values: Vec<f64> = rows.iter().map(|r| r.factor).collect();
        assert!(is_single_peaked(&values));
        let at = |n: usize| rows.iter().find(|r| r.n == n).unwrap().factor;
        let ratio = at(70) / at(35);
        assert!((0.35..=0.65).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn single_peak_detector() {
        assert!(is_single_peaked(&[0.0, 1.0, 3.0, 2.0, 1.0]));
        assert!(is_single_peaked(&[3.0, 2.0]));
        assert!(!is_single_peaked(&[0.0, 2.0, 1.0, 1.5]));
        assert!(!is_single_peaked(&[]));
    }
}
