//! Deterministic non-homogeneous mean schedules `H_n = H + g(n) E`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// `g(n) = 0`.
    None,
    /// `g(n) = 1 / ln(n + 1)`: Cesaro averages of the drift vanish, but
    /// `sum_n |H_n - H| / n` diverges.
    CesaroO1,
    /// `g(n) = 1 / n`: `sum_n |H_n - H| / n` converges.
    Summable,
}

impl DriftMode {
    pub fn factor(self, n: u64) -> f64 {
        match self {
            DriftMode::None => 0.0,
            DriftMode::CesaroO1 => 1.0 / ((n as f64) + 1.0).ln(),
            DriftMode::Summable => 1.0 / n as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftSchedule {
    base: Matrix,
    mode: DriftMode,
    perturbation: Matrix,
}

impl DriftSchedule {
    /// `perturbation` must keep every `H_n` nonnegative off the diagonal, which
    /// holds when its off-diagonal entries are nonnegative.
    pub fn new(base: Matrix, mode: DriftMode, perturbation: Matrix) -> Result<Self> {
        if base.dim() != perturbation.dim() {
            return Err(Error::Invalid("drift perturbation has the wrong dimension".into()));
        }
        if mode != DriftMode::None && !perturbation.off_diagonal_nonnegative() {
            return Err(Error::Invalid(
                "drift perturbation must have nonnegative off-diagonal entries".into(),
            ));
        }
        Ok(Self { base, mode, perturbation })
    }

    pub fn base(&self) -> &Matrix {
        &self.base
    }

    pub fn mode(&self) -> DriftMode {
        self.mode
    }

    pub fn perturbation(&self) -> &Matrix {
        &self.perturbation
    }

    /// `H_n`; steps are numbered from 1.
    pub fn mean_at(&self, n: u64) -> Matrix {
        let g = self.mode.factor(n.max(1));
        if g == 0.0 {
            self.base.clone()
        } else {
            self.base.add_scaled(&self.perturbation, g)
        }
    }

    pub fn mean_into(&self, n: u64, out: &mut Matrix) {
        let g = self.mode.factor(n.max(1));
        for ((o, b), e) in
            out.as_mut_slice().iter_mut().zip(self.base.as_slice()).zip(self.perturbation.as_slice())
        {
            *o = b + g * e;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftTrace {
    pub n: u64,
    /// `(1/n) sum_{m<=n} |H_m - H|`.
    pub cesaro: f64,
    /// `sum_{m<=n} |H_m - H| / m`.
    pub weighted: f64,
}

/// Exact partial sums of the drift norms along the schedule.
pub fn drift_cesaro_diagnostics(schedule: &DriftSchedule, n: u64) -> Result<DriftTrace> {
    Ok(*drift_trace(schedule, &[n])?.last().expect("one checkpoint requested"))
}

/// Partial sums evaluated at every checkpoint (sorted, all >= 1).
pub fn drift_trace(schedule: &DriftSchedule, checkpoints: &[u64]) -> Result<Vec<DriftTrace>> {
    if checkpoints.first().is_some_and(|&n| n == 0) {
        return Err(Error::Precondition("drift diagnostics need n >= 1".into()));
    }
    if checkpoints.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Precondition("checkpoints must be sorted".into()));
    }
    let mut out = Vec::with_capacity(checkpoints.len());
    let (mut total, mut weighted) = (0.0, 0.0);
    let mut m = 0u64;
    let mut h = schedule.base.clone();
    for &n in checkpoints {
        while m < n {
            m += 1;
            let dist = if schedule.mode == DriftMode::None {
                0.0
            } else {
                schedule.mean_into(m, &mut h);
                h.add_scaled(&schedule.base, -1.0).norm()
            };
            total += dist;
            weighted += dist / m as f64;
        }
        out.push(DriftTrace { n, cesaro: total / n as f64, weighted });
    }
    Ok(out)
}
