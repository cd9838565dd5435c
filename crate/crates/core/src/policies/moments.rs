//! Empirical moment checks on `||D||`.

use rand::Rng;
use serde::Serialize;

use super::ReplacementSpec;
use crate::matrix::Matrix;

/// Relative change between the N/4 and N estimates above which a moment is
/// flagged as possibly infinite.
pub const GROWTH_THRESHOLD: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Estimate from the first quarter of the sample.
    pub quarter_mean: f64,
    pub growth_flag: bool,
}

/// Estimates of `E||D||`, `E||D|| log+ ||D||` and `E||D||^2`, in that order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentReport {
    pub samples: usize,
    pub moments: [MomentEstimate; 3],
    /// Exact finiteness when the policy knows it.
    pub analytic_finite: Option<[bool; 3]>,
}

impl MomentReport {
    /// Analytic answer when available, otherwise the negated growth flags.
    pub fn finite(&self) -> [bool; 3] {
        self.analytic_finite
            .unwrap_or_else(|| [0, 1, 2].map(|i| !self.moments[i].growth_flag))
    }
}

struct Acc {
    sum: f64,
    sq: f64,
}

fn estimate(acc: &Acc, quarter: &Acc, n: usize) -> MomentEstimate {
    let nf = n as f64;
    let mean = acc.sum / nf;
    let var = (acc.sq / nf - mean * mean).max(0.0);
    let q = (n / 4).max(1) as f64;
    let quarter_mean = quarter.sum / q;
    let growth_flag = if quarter_mean.abs() > 0.0 {
        (mean - quarter_mean).abs() / quarter_mean.abs() > GROWTH_THRESHOLD
    } else {
        mean.abs() > 0.0
    };
    MomentEstimate { mean, std_error: (var / nf).sqrt(), quarter_mean, growth_flag }
}

/// Draws `n` matrices at step 1 and summarizes the three norm moments.
pub fn moment_diagnostics<R: Rng + ?Sized>(policy: &ReplacementSpec, n: usize, rng: &mut R) -> MomentReport {
    assert!(n >= 4, "need at least four samples");
    let mut acc: [Acc; 3] = std::array::from_fn(|_| Acc { sum: 0.0, sq: 0.0 });
    let mut quarter: [Acc; 3] = std::array::from_fn(|_| Acc { sum: 0.0, sq: 0.0 });
    let mut m = Matrix::zeros(policy.dim());
    for i in 0..n {
        policy.sample_into(1, rng, &mut m);
        let x = m.norm();
        let vals = [x, x * x.ln().max(0.0), x * x];
        for k in 0..3 {
            acc[k].sum += vals[k];
            acc[k].sq += vals[k] * vals[k];
            if i < n / 4 {
                quarter[k].sum += vals[k];
                quarter[k].sq += vals[k] * vals[k];
            }
        }
    }
    let moments = [0, 1, 2].map(|k| estimate(&acc[k], &quarter[k], n));
    let analytic_finite = policy.analytic_finite_moments();
    MomentReport { samples: n, moments, analytic_finite }
}

impl ReplacementSpec {
    /// Finite moments known in closed form; bounded-support policies have all three.
    pub fn analytic_finite_moments(&self) -> Option<[bool; 3]> {
        match self.log_zeta_table() {
            Some(t) => Some(t.finite_moments()),
            None if self.row_distribution(0, 1).is_some() => Some([true; 3]),
            None => None,
        }
    }
}
