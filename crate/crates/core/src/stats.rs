//! Small numerical helpers: compensated summation and sample statistics.

/// Neumaier (improved Kahan) running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &Self) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Mean, unbiased variance and their standard errors for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSummary {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub stderr_mean: f64,
    /// Jackknife standard error of `variance`; NaN below three observations.
    pub stderr_variance: f64,
}

/// Two-pass summary. The mean is accumulated incrementally so a sample of
/// identical values has exactly zero variance.
pub fn summarize(xs: &[f64]) -> SampleSummary {
    let count = xs.len();
    let nf = count as f64;
    let mut mean = 0.0;
    for (k, &x) in xs.iter().enumerate() {
        mean += (x - mean) / (k + 1) as f64;
    }
    let m2: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let variance = if count > 1 { m2 / (nf - 1.0) } else { 0.0 };
    let stderr_mean = if count > 1 { (variance / nf).sqrt() } else { f64::NAN };
    SampleSummary {
        count,
        mean,
        variance,
        stderr_mean,
        stderr_variance: jackknife_variance_stderr(xs, mean, m2),
    }
}

/// Leave-one-out jackknife of the unbiased variance, O(N):
/// dropping `x_i` leaves `M2 - (x_i - m)^2 N/(N-1)` as the sum of squares.
fn jackknife_variance_stderr(xs: &[f64], mean: f64, m2: f64) -> f64 {
    let count = xs.len();
    if count < 3 {
        return f64::NAN;
    }
    let nf = count as f64;
    let loo = |x: f64| (m2 - (x - mean).powi(2) * nf / (nf - 1.0)) / (nf - 2.0);
    let mut avg = 0.0;
    for (k, &x) in xs.iter().enumerate() {
        avg += (loo(x) - avg) / (k + 1) as f64;
    }
    let spread: f64 = xs.iter().map(|&x| (loo(x) - avg).powi(2)).sum();
    ((nf - 1.0) / nf * spread).sqrt()
}
