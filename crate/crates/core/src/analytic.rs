//! Closed-form first and second moments of the weight process and the
//! resulting mean and variance of the consensus value.
//!
//! With `q = 1 - p` and `d_i ~ Binomial(n - 1, p)`:
//!
//! * `f1 = E[1/(d_i+1)] = (1 - q^n) / (n p)` is the expected self weight,
//! * `g2 = E[1/(d_i+1)^2] = q^{n-1} H(p, n)` is its second moment,
//! * `E[W ⊗ W]` takes one of six values `Q1..Q6` depending on how the four
//!   indices coincide,
//! * the unit left eigenvector of `E[W ⊗ W]` has only two distinct entries,
//!   in ratio `ρ`, and the consensus value has variance
//!   `(1 - ρ)/δ · Σ (x_i(0) - x̄(0))^2` with `δ = n + n(n-1)ρ`.

use statrs::function::factorial::ln_binomial;

use crate::dynamics::{StateVector, WeightMatrix};
use crate::er_graph::ModelParams;
use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;

/// Largest `n` for which the dense `n² × n²` moment matrix is built.
pub const MAX_DENSE_NODES: usize = 60;

/// `1 - (1 - p)^k` without cancellation for small `p`.
pub fn one_minus_q_pow(p: f64, k: usize) -> f64 {
    -(k as f64 * (-p).ln_1p()).exp_m1()
}

fn f1_raw(p: f64, n: usize) -> f64 {
    one_minus_q_pow(p, n) / (n as f64 * p)
}

/// `E[1/(D+1)^2]` for `D ~ Binomial(n - 1, p)`, summing the pmf outward from
/// its mode so no term overflows and `q^{n-1}` may underflow harmlessly.
fn g2_raw(p: f64, n: usize) -> f64 {
    let m = n - 1;
    if m == 0 {
        return 1.0;
    }
    if p >= 1.0 {
        return 1.0 / (n as f64 * n as f64);
    }
    let q = 1.0 - p;
    let odds = p / q;
    let mode = (((m + 1) as f64 * p).floor() as usize).min(m);
    let log_pmf_mode =
        ln_binomial(m as u64, mode as u64) + mode as f64 * p.ln() + (m - mode) as f64 * (-p).ln_1p();
    let pmf_mode = log_pmf_mode.exp();
    let weight = |k: usize| 1.0 / ((k + 1) as f64).powi(2);

    let mut upper = 0.0;
    let mut pmf = pmf_mode;
    for k in mode..=m {
        if k > mode {
            pmf *= (m - k + 1) as f64 / k as f64 * odds;
        }
        upper += pmf * weight(k);
    }
    let mut lower = 0.0;
    let mut pmf = pmf_mode;
    for k in (0..mode).rev() {
        pmf *= (k + 1) as f64 / (m - k) as f64 / odds;
        lower += pmf * weight(k);
    }
    upper + lower
}

/// Expected self weight `f1(p, n) = (1 - q^n) / (n p)`.
pub fn f1(params: ModelParams) -> f64 {
    f1_raw(params.p(), params.n())
}

/// Second moment of the self weight, `q^{n-1} H(p, n)`.
pub fn g2(params: ModelParams) -> f64 {
    g2_raw(params.p(), params.n())
}

/// The power series `H(p, n) = Σ_{k<n} (k+1)^{-2} C(n-1, k) (p/q)^k`, evaluated
/// term by term. Only meaningful for small `n` and `p < 1`; `n = 1` is
/// accepted and gives `1`.
pub fn hypergeometric_h(p: f64, n: usize) -> f64 {
    assert!(n >= 1 && p > 0.0 && p < 1.0);
    let odds = p / (1.0 - p);
    let mut binom = 1.0;
    let mut power = 1.0;
    let mut sum = 0.0;
    for k in 0..n {
        if k > 0 {
            binom *= (n - k) as f64 / k as f64;
            power *= odds;
        }
        sum += binom * power / ((k + 1) as f64).powi(2);
    }
    sum
}

/// `H(p, n)` recovered as `g2 / q^{n-1}`; usable while `q^{n-1}` is representable.
pub fn hypergeometric_h_from_g2(p: f64, n: usize) -> f64 {
    g2_raw(p, n) / (1.0 - p).powi(n as i32 - 1)
}

/// All scalar moments for one `(n, p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticMoments {
    pub n: usize,
    pub p: f64,
    pub f1: f64,
    pub g2: f64,
    /// `E w_ij`, `i != j`.
    pub off_diag: f64,
    /// `E w_ii^2`
    pub q1: f64,
    /// `E w_ii w_jj`
    pub q2: f64,
    /// `E w_ii w_is = E w_ij^2`
    pub q3: f64,
    /// `E w_ii w_rs`, `i != r`, exactly one factor diagonal
    pub q4: f64,
    /// `E w_ij w_is`, `j != s`; needs three distinct indices so absent at `n = 2`.
    pub q5: Option<f64>,
    /// products of two off-diagonal entries from different rows
    pub q6: f64,
    pub rho: f64,
    /// `1 - ρ`, computed without cancellation near `p = 1`.
    pub one_minus_rho: f64,
    pub delta: f64,
    /// `n (1 - ρ) / δ`
    pub factor: f64,
}

impl AnalyticMoments {
    pub fn new(params: ModelParams) -> Self {
        let n = params.n();
        let nf = n as f64;
        let p = params.p();
        let q = params.q();
        let f1 = f1(params);
        let g2 = g2(params);
        let off_diag = (1.0 - f1) / (nf - 1.0);
        let q5 = (n >= 3).then(|| (1.0 + 2.0 * g2 - 3.0 * f1) / ((nf - 1.0) * (nf - 2.0)));
        let (rho, one_minus_rho) = rho_parts(p, n);
        let delta = nf + nf * (nf - 1.0) * rho;
        debug_assert!(q >= 0.0);
        Self {
            n,
            p,
            f1,
            g2,
            off_diag,
            q1: g2,
            q2: f1 * f1,
            q3: (f1 - g2) / (nf - 1.0),
            q4: f1 * off_diag,
            q5,
            q6: off_diag * off_diag,
            rho,
            one_minus_rho,
            delta,
            factor: nf * one_minus_rho / delta,
        }
    }
}

/// `(ρ, 1 - ρ)` with
/// `ρ = p(n-1) / (p(n-2) + 1 - q^n)` and `1 - ρ = q(1 - q^{n-1}) / (same)`.
fn rho_parts(p: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let q = 1.0 - p;
    let denom = p * (nf - 2.0) + one_minus_q_pow(p, n);
    let rho = p * (nf - 1.0) / denom;
    let one_minus_rho = q * one_minus_q_pow(p, n - 1) / denom;
    (rho, one_minus_rho)
}

/// Fills the six `E[w_ij w_rs]` cases (plus the other scalars).
pub fn q_cases(params: ModelParams) -> AnalyticMoments {
    AnalyticMoments::new(params)
}

/// `E W`: `f1` on the diagonal, `(1 - f1)/(n - 1)` elsewhere.
pub fn expected_w(params: ModelParams) -> WeightMatrix {
    let m = AnalyticMoments::new(params);
    WeightMatrix::from_matrix(SquareMatrix::from_fn(params.n(), |i, j| {
        if i == j {
            m.f1
        } else {
            m.off_diag
        }
    }))
}

/// Pattern view of `E[W ⊗ W]`. Row `(i, r)` is index `i n + r`, column
/// `(j, s)` is `j n + s`, and the entry is `E[w_ij w_rs]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KronMoments {
    m: AnalyticMoments,
}

impl KronMoments {
    pub fn new(params: ModelParams) -> Self {
        Self {
            m: AnalyticMoments::new(params),
        }
    }

    pub fn moments(&self) -> &AnalyticMoments {
        &self.m
    }

    /// Side length `n²`.
    pub fn dim(&self) -> usize {
        self.m.n * self.m.n
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        let n = self.m.n;
        let (i, r) = (row / n, row % n);
        let (j, s) = (col / n, col % n);
        if i == r {
            match (j == i, s == i) {
                (true, true) => self.m.q1,
                (true, false) | (false, true) => self.m.q3,
                (false, false) if j == s => self.m.q3,
                (false, false) => self.m.q5.expect("three distinct indices need n >= 3"),
            }
        } else {
            // Rows i != r use disjoint edge sets, so the factors are independent.
            match (j == i, s == r) {
                (true, true) => self.m.q2,
                (true, false) | (false, true) => self.m.q4,
                (false, false) => self.m.q6,
            }
        }
    }

    /// Row sum from the case counts, O(1).
    pub fn row_sum(&self, row: usize) -> f64 {
        let n = self.m.n;
        let k = (n - 1) as f64;
        if row / n == row % n {
            self.m.q1 + 3.0 * k * self.m.q3 + k * (k - 1.0) * self.m.q5.unwrap_or(0.0)
        } else {
            self.m.q2 + 2.0 * k * self.m.q4 + k * k * self.m.q6
        }
    }

    /// Dense `n² × n²` matrix; refused above [`MAX_DENSE_NODES`].
    pub fn dense(&self) -> Result<SquareMatrix> {
        if self.m.n > MAX_DENSE_NODES {
            return Err(Error::DenseTooLarge {
                n: self.m.n,
                max: MAX_DENSE_NODES,
            });
        }
        Ok(SquareMatrix::from_fn(self.dim(), |row, col| {
            self.entry(row, col)
        }))
    }

    /// `vᵀ E[W ⊗ W]` in O(n²).
    ///
    /// Off the diagonal blocks the matrix equals `K ⊗ K` with `K = E W`, whose
    /// action is `Kᵀ V K` on `v` reshaped to `n × n`; rows `(i, i)` then get a
    /// structured correction.
    pub fn apply_left(&self, v: &[f64]) -> Vec<f64> {
        let n = self.m.n;
        assert_eq!(v.len(), n * n);
        let (f, o) = (self.m.f1, self.m.off_diag);
        let b = f - o;
        let total: f64 = v.iter().sum();
        let row_sums: Vec<f64> = (0..n).map(|j| v[j * n..(j + 1) * n].iter().sum()).collect();
        let col_sums: Vec<f64> = (0..n).map(|s| (0..n).map(|i| v[i * n + s]).sum()).collect();
        let diag: Vec<f64> = (0..n).map(|i| v[i * n + i]).collect();
        let diag_total: f64 = diag.iter().sum();

        let d_same = self.m.q1 - f * f;
        let d_touch = self.m.q3 - f * o;
        let d_square = self.m.q3 - o * o;
        let d_apart = self.m.q5.unwrap_or(0.0) - o * o;

        let mut out = vec![0.0; n * n];
        for j in 0..n {
            for s in 0..n {
                let base = o * o * total + o * b * (col_sums[s] + row_sums[j]) + b * b * v[j * n + s];
                let fix = if j == s {
                    diag[j] * d_same + (diag_total - diag[j]) * d_square
                } else {
                    (diag[j] + diag[s]) * d_touch + (diag_total - diag[j] - diag[s]) * d_apart
                };
                out[j * n + s] = base + fix;
            }
        }
        out
    }
}

/// Builds `E[W ⊗ W]` densely (`n ≤ 60`).
pub fn assemble_kron_expectation(params: ModelParams) -> Result<SquareMatrix> {
    KronMoments::new(params).dense()
}

/// Coefficients of the 2×2 map `(α, β) ↦ (α', β')` that `E[W ⊗ W]` induces on
/// vectors equal to `β` at positions `(i, i)` and `α` elsewhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl PatternCoefficients {
    /// `α / β` of the unit eigenvector, `B / (1 - A)`.
    pub fn ratio(&self) -> f64 {
        self.b / (1.0 - self.a)
    }

    /// `BC - (1 - A)(1 - D)`, zero when the map has eigenvalue one.
    pub fn unit_eigenvalue_defect(&self) -> f64 {
        self.b * self.c - (1.0 - self.a) * (1.0 - self.d)
    }

    pub fn apply(&self, alpha: f64, beta: f64) -> (f64, f64) {
        (self.a * alpha + self.b * beta, self.c * alpha + self.d * beta)
    }
}

pub fn pattern_coefficients(params: ModelParams) -> PatternCoefficients {
    let nf = params.n() as f64;
    let f = f1(params);
    let k = nf * f + nf - 2.0;
    PatternCoefficients {
        a: 1.0 - k * (1.0 - f) / ((nf - 1.0) * (nf - 1.0)),
        b: (1.0 - f) / (nf - 1.0),
        c: k * (1.0 - f) / (nf - 1.0),
        d: f,
    }
}

/// `(ρ, δ)` with `δ = n + n(n-1)ρ`.
pub fn rho_delta(params: ModelParams) -> (f64, f64) {
    let m = AnalyticMoments::new(params);
    (m.rho, m.delta)
}

/// Unit left eigenvector of `E[W ⊗ W]`: `1/δ` at positions `(i, i)`, `ρ/δ`
/// elsewhere.
pub fn unit_eigenvector(params: ModelParams) -> Vec<f64> {
    let m = AnalyticMoments::new(params);
    let n = params.n();
    let mut v = vec![m.rho / m.delta; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0 / m.delta;
    }
    v
}

/// `E x* = x̄(0)`.
pub fn consensus_mean(x0: &StateVector) -> Result<f64> {
    if x0.is_empty() {
        return Err(Error::InvalidInitialCondition("empty state vector".into()));
    }
    Ok(x0.mean())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceReport {
    pub mean: f64,
    pub variance: f64,
    pub rho: f64,
    pub delta: f64,
    pub factor: f64,
    /// Unnormalized `Σ (x_i(0) - x̄(0))^2`.
    pub x0_sum_sq_dev: f64,
}

/// `var x* = (1 - ρ)/δ · Σ (x_i(0) - x̄(0))^2`.
pub fn consensus_variance(params: ModelParams, x0: &StateVector) -> Result<VarianceReport> {
    if x0.len() != params.n() {
        return Err(Error::DimensionMismatch {
            expected: params.n(),
            actual: x0.len(),
        });
    }
    let m = AnalyticMoments::new(params);
    let spread = x0.sum_sq_dev();
    Ok(VarianceReport {
        mean: x0.mean(),
        variance: m.one_minus_rho / m.delta * spread,
        rho: m.rho,
        delta: m.delta,
        factor: m.factor,
        x0_sum_sq_dev: spread,
    })
}

/// `n (1 - ρ) / δ`, the variance of `x*` per unit of normalized dispersion of `x(0)`.
pub fn variance_factor(params: ModelParams) -> f64 {
    AnalyticMoments::new(params).factor
}

fn argmax_over_sizes(c: f64, n_max: usize, score: impl Fn(ModelParams) -> f64) -> Result<usize> {
    if !(c >= 1.0 && c.is_finite()) {
        return Err(Error::InvalidRange(format!("expected degree c must be >= 1, got {c}")));
    }
    let start = c.floor() as usize + 1;
    if n_max < start {
        return Err(Error::InvalidRange(format!("n_max {n_max} must exceed c = {c}")));
    }
    let mut best = (start, f64::NEG_INFINITY);
    for n in start..=n_max {
        let v = score(ModelParams::with_degree(n, c)?);
        if v > best.1 {
            best = (n, v);
        }
    }
    Ok(best.0)
}

/// Size `n ∈ (c, n_max]` maximizing the variance of `x*` for the ramp
/// `x_i(0) = i/n` at `p = c/n`; ties go to the smaller `n`.
pub fn peak_size(c: f64, n_max: usize) -> Result<usize> {
    argmax_over_sizes(c, n_max, |params| {
        let x0 = StateVector::ramp(params.n());
        consensus_variance(params, &x0).map(|r| r.variance).unwrap_or(f64::NAN)
    })
}

/// Size `n ∈ (c, n_max]` maximizing `n (1 - ρ)/δ` at `p = c/n`.
pub fn factor_peak_size(c: f64, n_max: usize) -> Result<usize> {
    argmax_over_sizes(c, n_max, variance_factor)
}
