//! Brute-force ground truth: exact `E W` and `E[W ⊗ W]` by summing over every
//! graph realization, power-iteration eigenvectors, and the second-moment
//! variance formula `[x ⊗ x]ᵀ v(E[W⊗W]) - (xᵀ v(E W))^2`.
//!
//! Nothing here calls into the closed forms of [`crate::analytic`] except
//! [`oracle_report`], which exists to compare the two.

use serde::Serialize;

use crate::analytic;
use crate::dynamics::{weight_matrix, StateVector};
use crate::er_graph::{check_enumerable, graph_from_index, realization_probability, slot_count, ModelParams};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::{max_abs_diff, SquareMatrix};
use crate::stats::CompensatedSum;

pub const POWER_TOLERANCE: f64 = 1e-13;
pub const POWER_MAX_ITERATIONS: usize = 1_000_000;

/// Graphs per enumeration chunk. Fixed so the summation order is independent
/// of the worker count.
const CHUNK: u64 = 1 << 12;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactMoments {
    pub ew: SquareMatrix,
    pub eww: SquareMatrix,
}

struct Accumulator {
    ew: Vec<CompensatedSum>,
    eww: Vec<CompensatedSum>,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Self {
            ew: vec![CompensatedSum::default(); n * n],
            eww: vec![CompensatedSum::default(); n * n * n * n],
        }
    }

    fn merge(&mut self, other: &Self) {
        for (a, b) in self.ew.iter_mut().zip(&other.ew) {
            a.merge(b);
        }
        for (a, b) in self.eww.iter_mut().zip(&other.eww) {
            a.merge(b);
        }
    }
}

/// Sums `prob · W` and `prob · (W ⊗ W)` over all `2^{n(n-1)}` graphs.
pub fn exact_moments_by_enumeration(params: ModelParams) -> Result<ExactMoments> {
    exact_moments_with(params, Execution::default())
}

pub fn exact_moments_with(params: ModelParams, exec: Execution) -> Result<ExactMoments> {
    let n = params.n();
    check_enumerable(n)?;
    let total = 1u64 << slot_count(n);
    let chunks = total.div_ceil(CHUNK) as usize;
    let nn = n * n;

    let partials = exec.map(chunks, |c| {
        let mut acc = Accumulator::new(n);
        let start = c as u64 * CHUNK;
        let end = (start + CHUNK).min(total);
        let mut nonzero = Vec::with_capacity(nn);
        for index in start..end {
            let g = graph_from_index(n, index);
            let prob = realization_probability(params, g.edge_count());
            if prob == 0.0 {
                continue;
            }
            let w = weight_matrix(&g);
            nonzero.clear();
            for i in 0..n {
                for j in 0..n {
                    let v = w.get(i, j);
                    if v != 0.0 {
                        nonzero.push((i, j, v));
                        acc.ew[i * n + j].add(prob * v);
                    }
                }
            }
            for &(i, j, a) in &nonzero {
                for &(r, s, b) in &nonzero {
                    acc.eww[(i * n + r) * nn + j * n + s].add(prob * a * b);
                }
            }
        }
        acc
    });

    let mut total_acc = Accumulator::new(n);
    for part in &partials {
        total_acc.merge(part);
    }
    Ok(ExactMoments {
        ew: SquareMatrix::from_row_major(n, total_acc.ew.iter().map(|s| s.value()).collect()),
        eww: SquareMatrix::from_row_major(nn, total_acc.eww.iter().map(|s| s.value()).collect()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenvectorEstimate {
    pub vector: Vec<f64>,
    /// `‖vᵀ M - vᵀ‖∞`
    pub residual: f64,
    pub iterations: usize,
}

/// Left eigenvector for eigenvalue one of a row-stochastic matrix, by power
/// iteration on `vᵀ ↦ vᵀ M` from the uniform vector.
pub fn left_unit_eigenvector(m: &SquareMatrix, tol: f64) -> Result<EigenvectorEstimate> {
    let dim = m.dim();
    let mut v = vec![1.0 / dim as f64; dim];
    let mut residual = f64::INFINITY;
    for iterations in 0..POWER_MAX_ITERATIONS {
        let next = m.left_mul(&v);
        residual = max_abs_diff(&next, &v);
        if residual < tol {
            return Ok(EigenvectorEstimate {
                vector: v,
                residual,
                iterations,
            });
        }
        let total: f64 = next.iter().sum();
        v = next.into_iter().map(|x| x / total).collect();
    }
    Err(Error::EigenNotConverged {
        iterations: POWER_MAX_ITERATIONS,
        residual,
    })
}

/// `[x ⊗ x]ᵀ v_kron - (xᵀ v_mean)^2`.
pub fn second_moment_variance(x0: &[f64], v_kron: &[f64], v_mean: &[f64]) -> f64 {
    let n = x0.len();
    assert_eq!(v_kron.len(), n * n);
    assert_eq!(v_mean.len(), n);
    let mut second = CompensatedSum::default();
    for i in 0..n {
        for r in 0..n {
            second.add(x0[i] * x0[r] * v_kron[i * n + r]);
        }
    }
    let first: f64 = x0.iter().zip(v_mean).map(|(x, v)| x * v).sum();
    second.value() - first * first
}

/// Variance of `x*` from enumerated moments and power-iteration eigenvectors.
pub fn exact_variance(params: ModelParams, x0: &StateVector) -> Result<f64> {
    let moments = exact_moments_by_enumeration(params)?;
    variance_from_moments(&moments, x0)
}

fn variance_from_moments(moments: &ExactMoments, x0: &StateVector) -> Result<f64> {
    if x0.len() != moments.ew.dim() {
        return Err(Error::DimensionMismatch {
            expected: moments.ew.dim(),
            actual: x0.len(),
        });
    }
    let v_mean = left_unit_eigenvector(&moments.ew, POWER_TOLERANCE)?;
    let v_kron = left_unit_eigenvector(&moments.eww, POWER_TOLERANCE)?;
    Ok(second_moment_variance(
        x0.values(),
        &v_kron.vector,
        &v_mean.vector,
    ))
}

/// Spectral radius via normalized repeated squaring:
/// `ρ(B) = lim ‖B^{2^k}‖^{1/2^k}`.
pub fn spectral_radius(b: &SquareMatrix) -> f64 {
    let norm = b.frobenius_norm();
    if norm == 0.0 {
        return 0.0;
    }
    let mut c = b.clone();
    c.scale_in_place(1.0 / norm);
    let mut log_scale = norm.ln();
    let mut estimate = norm;
    let mut power = 1.0f64;
    for _ in 0..64 {
        let sq = c.matmul(&c);
        let nrm = sq.frobenius_norm();
        if nrm == 0.0 {
            return 0.0;
        }
        c = sq;
        c.scale_in_place(1.0 / nrm);
        log_scale = 2.0 * log_scale + nrm.ln();
        power *= 2.0;
        let next = (log_scale / power).exp();
        if (next - estimate).abs() <= 1e-16 * next.max(1e-300) {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Second largest eigenvalue modulus of a row-stochastic matrix: deflate the
/// unit eigenpair `1 vᵀ` and take the spectral radius of the remainder.
pub fn slem(m: &SquareMatrix) -> Result<f64> {
    let v = left_unit_eigenvector(m, POWER_TOLERANCE)?;
    let dim = m.dim();
    let deflated = SquareMatrix::from_fn(dim, |i, j| m[(i, j)] - v.vector[j]);
    Ok(spectral_radius(&deflated))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Discrepancies {
    pub expected_w: f64,
    pub expected_kron: f64,
    pub eigenvector: f64,
    pub variance: f64,
}

impl Discrepancies {
    pub fn max(&self) -> f64 {
        [self.expected_w, self.expected_kron, self.eigenvector, self.variance]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Enumerated ground truth next to the closed forms.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub exact_ew: SquareMatrix,
    pub exact_eww: SquareMatrix,
    pub exact_eigenvector: EigenvectorEstimate,
    pub exact_variance: f64,
    pub closed_form_variance: f64,
    pub discrepancies: Discrepancies,
    pub max_abs_discrepancy: f64,
}

pub fn oracle_report(params: ModelParams, x0: &StateVector) -> Result<OracleReport> {
    let moments = exact_moments_by_enumeration(params)?;
    let closed_form_variance = analytic::consensus_variance(params, x0)?.variance;
    let exact_eigenvector = left_unit_eigenvector(&moments.eww, POWER_TOLERANCE)?;
    let exact_variance = variance_from_moments(&moments, x0)?;

    let discrepancies = Discrepancies {
        expected_w: moments
            .ew
            .max_abs_diff(analytic::expected_w(params).as_matrix()),
        expected_kron: moments
            .eww
            .max_abs_diff(&analytic::assemble_kron_expectation(params)?),
        eigenvector: max_abs_diff(
            &exact_eigenvector.vector,
            &analytic::unit_eigenvector(params),
        ),
        variance: (exact_variance - closed_form_variance).abs(),
    };
    Ok(OracleReport {
        exact_ew: moments.ew,
        exact_eww: moments.eww,
        exact_eigenvector,
        exact_variance,
        closed_form_variance,
        max_abs_discrepancy: discrepancies.max(),
        discrepancies,
    })
}
