//! Weight matrices `W = (D + I)^{-1}(A + I)` and the averaging recursion
//! `x(k) = W_k x(k-1)` driven by fresh i.i.d. graphs.

use rand::Rng;

use crate::er_graph::{DirectedGraph, GraphSampler, ModelParams};
use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;

/// Row-stochastic weight matrix of one graph realization.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(SquareMatrix);

impl WeightMatrix {
    pub fn from_graph(g: &DirectedGraph) -> Self {
        let n = g.n();
        let mut m = SquareMatrix::zeros(n);
        for i in 0..n {
            let w = 1.0 / (g.out_degree(i) + 1) as f64;
            m[(i, i)] = w;
            for j in g.neighbors(i) {
                m[(i, j)] = w;
            }
        }
        Self(m)
    }

    /// Wraps a matrix without checking stochasticity; used for expectations.
    pub fn from_matrix(m: SquareMatrix) -> Self {
        Self(m)
    }

    pub fn n(&self) -> usize {
        self.0.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &SquareMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> SquareMatrix {
        self.0
    }
}

/// Builds the weight matrix of a graph realization.
pub fn weight_matrix(g: &DirectedGraph) -> WeightMatrix {
    WeightMatrix::from_graph(g)
}

/// Agent states, one value per node.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    /// `x_i = i / n` for `i = 1..=n`.
    pub fn ramp(n: usize) -> Self {
        Self((1..=n).map(|i| i as f64 / n as f64).collect())
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self(vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn spread(&self) -> f64 {
        slice_spread(&self.0)
    }

    /// Arithmetic mean, accumulated as offsets from the minimum so that a
    /// constant vector returns its value exactly.
    pub fn mean(&self) -> f64 {
        let lo = self.min();
        lo + self.0.iter().map(|x| x - lo).sum::<f64>() / self.0.len() as f64
    }

    /// Unnormalized dispersion `Σ (x_i - x̄)^2`.
    pub fn sum_sq_dev(&self) -> f64 {
        let m = self.mean();
        self.0.iter().map(|x| (x - m).powi(2)).sum()
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

fn slice_spread(xs: &[f64]) -> f64 {
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    hi - lo
}

/// One update `W x` with a dense matrix.
pub fn step(w: &WeightMatrix, x: &StateVector) -> Result<StateVector> {
    if w.n() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: w.n(),
            actual: x.len(),
        });
    }
    Ok(StateVector(w.as_matrix().mul_vec(x.values())))
}

/// One update applied straight from the adjacency bits:
/// `y_i = (x_i + Σ_{j ∈ N(i)} x_j) / (d_i + 1)`.
///
/// Results are clamped to `[min x, max x]`; rounding can otherwise leave the
/// hull by an ulp.
pub fn step_graph(g: &DirectedGraph, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(g.n(), x.len());
    debug_assert_eq!(out.len(), x.len());
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (i, o) in out.iter_mut().enumerate() {
        let s: f64 = x[i] + g.neighbors(i).map(|j| x[j]).sum::<f64>();
        *o = (s / (g.out_degree(i) + 1) as f64).clamp(lo, hi);
    }
}

/// Stopping rule for [`run_consensus`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusControl {
    pub tol: f64,
    pub max_steps: u64,
}

impl Default for ConsensusControl {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOLERANCE,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

impl ConsensusControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidTolerance(self.tol));
        }
        if self.max_steps == 0 {
            return Err(Error::ZeroStepBudget);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusOutcome {
    /// Mean of the final state.
    pub value: f64,
    pub steps: u64,
    /// `max - min` of the final state.
    pub spread: f64,
}

/// Iterates with fresh graphs until the spread drops below `control.tol`.
pub fn run_consensus<R: Rng + ?Sized>(
    params: ModelParams,
    x0: &StateVector,
    rng: &mut R,
    control: ConsensusControl,
) -> Result<ConsensusOutcome> {
    control.validate()?;
    let sampler = GraphSampler::new(params);
    run_with_sampler(&sampler, x0, rng, control)
}

pub(crate) fn run_with_sampler<R: Rng + ?Sized>(
    sampler: &GraphSampler,
    x0: &StateVector,
    rng: &mut R,
    control: ConsensusControl,
) -> Result<ConsensusOutcome> {
    let n = sampler.params().n();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: x0.len(),
        });
    }
    let mut x = x0.values().to_vec();
    let mut next = vec![0.0; n];
    let mut graph = DirectedGraph::empty(n);
    let mut spread = x0.spread();
    let mut steps = 0;
    while spread >= control.tol {
        if steps == control.max_steps {
            return Err(Error::NotConverged { steps, spread });
        }
        sampler.sample_into(rng, &mut graph);
        step_graph(&graph, &x, &mut next);
        std::mem::swap(&mut x, &mut next);
        steps += 1;
        spread = slice_spread(&x);
    }
    let final_state = StateVector(x);
    Ok(ConsensusOutcome {
        value: final_state.mean(),
        steps,
        spread,
    })
}
