//! Mean and variance of the consensus value reached by averaging dynamics over
//! i.i.d. directed Erdős–Rényi graphs.
//!
//! Each step draws a fresh graph `G(n, p)`, and every agent replaces its state
//! with the average over itself and its out-neighbours. The agents agree on a
//! random value `x*` with `E x* = x̄(0)` and
//!
//! ```text
//! var x* = (1 - ρ)/δ · Σ (x_i(0) - x̄(0))^2,
//! ρ = p(n-1) / (p(n-2) + 1 - (1-p)^n),   δ = n + n(n-1)ρ.
//! ```
//!
//! * [`analytic`] evaluates these closed forms and the moment structure
//!   behind them.
//! * [`spectral_oracle`] recomputes the same quantities by exhaustive
//!   enumeration for `n ≤ 5`.
//! * [`montecarlo`] simulates ensembles of the dynamics for statistical
//!   comparison.
//! * [`cli`] is the command-line front end.

pub mod analytic;
pub mod cli;
pub mod dynamics;
pub mod er_graph;
pub mod error;
pub mod exec;
pub mod matrix;
pub mod montecarlo;
pub mod spectral_oracle;
pub mod stats;

pub use analytic::{consensus_mean, consensus_variance, variance_factor, AnalyticMoments, VarianceReport};
pub use dynamics::{run_consensus, ConsensusControl, ConsensusOutcome, StateVector, WeightMatrix};
pub use er_graph::{DirectedGraph, GraphSeed, ModelParams};
pub use error::{Error, Result};
pub use exec::Execution;
pub use montecarlo::{run_ensemble, EnsembleStats, ExperimentConfig, InitialCondition};
