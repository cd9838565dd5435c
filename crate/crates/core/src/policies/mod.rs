//! Replacement-matrix samplers.
//!
//! A [`PolicyConfig`] is the JSON description of a policy; compiling it gives
//! a [`ReplacementSpec`], which samples `D_n`, reports the analytic mean
//! `H_n` when one exists, and exposes the nonzero pattern used for the class
//! decomposition.

mod drift;
mod log_zeta;
mod moments;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use drift::{drift_cesaro_diagnostics, drift_trace, DriftMode, DriftSchedule, DriftTrace};
pub use log_zeta::{LogZetaTable, DEFAULT_CUTOFF};
pub use moments::{moment_diagnostics, MomentEstimate, MomentReport};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::spectral::{StructureMatrix, MAX_DIM};

const PROB_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub mode: DriftMode,
    #[serde(rename = "E")]
    pub e: Matrix,
}

fn default_true() -> bool {
    true
}

/// JSON form of a policy; `kind` selects the variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    Deterministic {
        #[serde(rename = "H")]
        h: Matrix,
        #[serde(default = "default_true")]
        nonneg_offdiag: bool,
    },
    /// Whole matrices drawn with the given probabilities.
    FiniteDiscrete {
        outcomes: Vec<Matrix>,
        probs: Vec<f64>,
        #[serde(default = "default_true")]
        nonneg_offdiag: bool,
    },
    /// Diagonal matrices whose entries are i.i.d. draws from `outcomes`.
    DiagonalIid { d: usize, outcomes: Vec<f64>, probs: Vec<f64> },
    /// Row `k` is a one-hot vector with `P(column q) = P[k][q]`.
    MarkovAdd {
        #[serde(rename = "P")]
        p: Matrix,
    },
    LogZetaDiagonal { d: usize, beta: f64 },
    Nonhomogeneous {
        #[serde(rename = "H")]
        h: Matrix,
        drift: DriftConfig,
    },
}

#[derive(Clone, Debug)]
enum Kind {
    Deterministic(Matrix),
    FiniteDiscrete { outcomes: Vec<Matrix>, probs: Vec<f64>, cdf: Vec<f64> },
    DiagonalIid { values: Vec<f64>, probs: Vec<f64>, cdf: Vec<f64> },
    MarkovAdd { p: Matrix, row_cdfs: Vec<Vec<f64>> },
    LogZeta(Arc<LogZetaTable>),
    Nonhomogeneous(DriftSchedule),
    ColumnScaled { inner: Box<ReplacementSpec>, scale: Vec<f64> },
}

/// A compiled, immutable replacement policy.
#[derive(Clone, Debug)]
pub struct ReplacementSpec {
    dim: usize,
    kind: Kind,
    nonneg_offdiag: bool,
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

/// Index drawn by inverse CDF on one uniform; never returns a zero-mass index.
pub(crate) fn inverse_cdf(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().expect("nonempty distribution");
    let target = u * total;
    let i = cdf.partition_point(|&c| c <= target);
    if i < cdf.len() {
        return i;
    }
    // rounding pushed us past the end: last index with positive mass
    (0..cdf.len())
        .rev()
        .find(|&k| cdf[k] > if k == 0 { 0.0 } else { cdf[k - 1] })
        .unwrap_or(cdf.len() - 1)
}

fn check_probs(probs: &[f64], field: &str) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Invalid(format!("{field}: empty probability vector")));
    }
    if let Some(i) = probs.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Invalid(format!("{field}[{i}]: probabilities must be nonnegative")));
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(Error::Invalid(format!("{field}: probabilities sum to {s}, expected 1")));
    }
    Ok(())
}

fn check_dim(d: usize, field: &str) -> Result<()> {
    if d == 0 || d > MAX_DIM {
        return Err(Error::Invalid(format!("{field}: dimension {d} outside 1..={MAX_DIM}")));
    }
    Ok(())
}

fn check_offdiag(m: &Matrix, field: &str) -> Result<()> {
    for i in 0..m.dim() {
        for j in 0..m.dim() {
            if i != j && m[(i, j)] < 0.0 {
                return Err(Error::Invalid(format!(
                    "{field}[{i}][{j}] = {}: off-diagonal entries must be nonnegative for this policy",
                    m[(i, j)]
                )));
            }
        }
    }
    Ok(())
}

impl ReplacementSpec {
    pub fn from_config(cfg: &PolicyConfig) -> Result<Self> {
        match cfg {
            PolicyConfig::Deterministic { h, nonneg_offdiag } => {
                check_dim(h.dim(), "H")?;
                if *nonneg_offdiag {
                    check_offdiag(h, "H")?;
                }
                Ok(Self { dim: h.dim(), kind: Kind::Deterministic(h.clone()), nonneg_offdiag: *nonneg_offdiag })
            }
            PolicyConfig::FiniteDiscrete { outcomes, probs, nonneg_offdiag } => {
                if outcomes.len() != probs.len() {
                    return Err(Error::Invalid("probs: length differs from outcomes".into()));
                }
                check_probs(probs, "probs")?;
                let dim = outcomes[0].dim();
                check_dim(dim, "outcomes")?;
                for (i, o) in outcomes.iter().enumerate() {
                    if o.dim() != dim {
                        return Err(Error::Invalid(format!("outcomes[{i}]: dimension differs")));
                    }
                    if *nonneg_offdiag {
                        check_offdiag(o, &format!("outcomes[{i}]"))?;
                    }
                }
                Ok(Self {
                    dim,
                    kind: Kind::FiniteDiscrete {
                        outcomes: outcomes.clone(),
                        probs: probs.clone(),
                        cdf: cumulative(probs),
                    },
                    nonneg_offdiag: *nonneg_offdiag,
                })
            }
            PolicyConfig::DiagonalIid { d, outcomes, probs } => {
                check_dim(*d, "d")?;
                if outcomes.len() != probs.len() {
                    return Err(Error::Invalid("probs: length differs from outcomes".into()));
                }
                check_probs(probs, "probs")?;
                if let Some(i) = outcomes.iter().position(|x| !x.is_finite()) {
                    return Err(Error::Invalid(format!("outcomes[{i}]: not finite")));
                }
                Ok(Self {
                    dim: *d,
                    kind: Kind::DiagonalIid {
                        values: outcomes.clone(),
                        probs: probs.clone(),
                        cdf: cumulative(probs),
                    },
                    nonneg_offdiag: true,
                })
            }
            PolicyConfig::MarkovAdd { p } => {
                check_dim(p.dim(), "P")?;
                for k in 0..p.dim() {
                    check_probs(p.row(k), &format!("P[{k}]"))?;
                }
                let row_cdfs = (0..p.dim()).map(|k| cumulative(p.row(k))).collect();
                Ok(Self { dim: p.dim(), kind: Kind::MarkovAdd { p: p.clone(), row_cdfs }, nonneg_offdiag: true })
            }
            PolicyConfig::LogZetaDiagonal { d, beta } => {
                check_dim(*d, "d")?;
                if !(beta.is_finite() && *beta > 0.0) {
                    return Err(Error::Invalid(format!("beta: must be positive, got {beta}")));
                }
                Ok(Self::log_zeta_diagonal(*d, Arc::new(LogZetaTable::new(*beta))))
            }
            PolicyConfig::Nonhomogeneous { h, drift } => {
                check_dim(h.dim(), "H")?;
                check_offdiag(h, "H")?;
                let schedule = DriftSchedule::new(h.clone(), drift.mode, drift.e.clone())?;
                Ok(Self { dim: h.dim(), kind: Kind::Nonhomogeneous(schedule), nonneg_offdiag: true })
            }
        }
    }

    pub fn deterministic(h: Matrix) -> Result<Self> {
        Self::from_config(&PolicyConfig::Deterministic { h, nonneg_offdiag: true })
    }

    pub fn finite_discrete(outcomes: Vec<Matrix>, probs: Vec<f64>) -> Result<Self> {
        Self::from_config(&PolicyConfig::FiniteDiscrete { outcomes, probs, nonneg_offdiag: true })
    }

    pub fn markov_add(p: Matrix) -> Result<Self> {
        Self::from_config(&PolicyConfig::MarkovAdd { p })
    }

    /// Shares a precomputed table between policies.
    pub fn log_zeta_diagonal(dim: usize, table: Arc<LogZetaTable>) -> Self {
        Self { dim, kind: Kind::LogZeta(table), nonneg_offdiag: true }
    }

    pub fn nonhomogeneous(schedule: DriftSchedule) -> Self {
        Self { dim: schedule.base().dim(), kind: Kind::Nonhomogeneous(schedule), nonneg_offdiag: true }
    }

    /// Policy `D diag(scale)`: the urn on `(a_1 Y_1, ..., a_d Y_d)` that draws
    /// colors with probability proportional to `a_k Y_k`.
    pub fn column_scaled(inner: ReplacementSpec, scale: Vec<f64>) -> Result<Self> {
        if scale.len() != inner.dim || scale.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::Invalid("scale must be a positive vector of the policy's dimension".into()));
        }
        Ok(Self {
            dim: inner.dim,
            nonneg_offdiag: inner.nonneg_offdiag,
            kind: Kind::ColumnScaled { inner: Box::new(inner), scale },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// True when sampled matrices never carry a negative off-diagonal entry.
    pub fn nonneg_offdiag(&self) -> bool {
        self.nonneg_offdiag
    }

    pub fn is_homogeneous(&self) -> bool {
        match &self.kind {
            Kind::Nonhomogeneous(s) => s.mode() == DriftMode::None,
            Kind::ColumnScaled { inner, .. } => inner.is_homogeneous(),
            _ => true,
        }
    }

    pub fn drift_schedule(&self) -> Option<&DriftSchedule> {
        match &self.kind {
            Kind::Nonhomogeneous(s) => Some(s),
            _ => None,
        }
    }

    pub fn log_zeta_table(&self) -> Option<&LogZetaTable> {
        match &self.kind {
            Kind::LogZeta(t) => Some(t),
            _ => None,
        }
    }

    /// Draws `D_n` into `out` (steps are numbered from 1).
    pub fn sample_into<R: Rng + ?Sized>(&self, n: u64, rng: &mut R, out: &mut Matrix) {
        debug_assert_eq!(out.dim(), self.dim);
        match &self.kind {
            Kind::Deterministic(h) => out.as_mut_slice().copy_from_slice(h.as_slice()),
            Kind::FiniteDiscrete { outcomes, cdf, .. } => {
                let i = inverse_cdf(cdf, rng.random());
                out.as_mut_slice().copy_from_slice(outcomes[i].as_slice());
            }
            Kind::DiagonalIid { values, cdf, .. } => {
                out.as_mut_slice().fill(0.0);
                for k in 0..self.dim {
                    out[(k, k)] = values[inverse_cdf(cdf, rng.random())];
                }
            }
            Kind::MarkovAdd { row_cdfs, .. } => {
                out.as_mut_slice().fill(0.0);
                for (k, cdf) in row_cdfs.iter().enumerate() {
                    out[(k, inverse_cdf(cdf, rng.random()))] = 1.0;
                }
            }
            Kind::LogZeta(table) => {
                out.as_mut_slice().fill(0.0);
                for k in 0..self.dim {
                    out[(k, k)] = table.sample(rng);
                }
            }
            Kind::Nonhomogeneous(schedule) => schedule.mean_into(n, out),
            Kind::ColumnScaled { inner, scale } => {
                inner.sample_into(n, rng, out);
                for k in 0..self.dim {
                    for (x, a) in out.row_mut(k).iter_mut().zip(scale) {
                        *x *= a;
                    }
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> Matrix {
        let mut out = Matrix::zeros(self.dim);
        self.sample_into(n, rng, &mut out);
        out
    }

    pub fn has_analytic_mean(&self) -> bool {
        match &self.kind {
            Kind::LogZeta(t) => t.mean().is_some(),
            Kind::ColumnScaled { inner, .. } => inner.has_analytic_mean(),
            _ => true,
        }
    }

    /// Exact `H_n = E[D_n]`.
    pub fn mean_matrix(&self, n: u64) -> Result<Matrix> {
        Ok(match &self.kind {
            Kind::Deterministic(h) => h.clone(),
            Kind::FiniteDiscrete { outcomes, probs, .. } => {
                let mut m = Matrix::zeros(self.dim);
                for (o, p) in outcomes.iter().zip(probs) {
                    m = m.add_scaled(o, *p);
                }
                m
            }
            Kind::DiagonalIid { values, probs, .. } => {
                let mean: f64 = values.iter().zip(probs).map(|(v, p)| v * p).sum();
                Matrix::identity(self.dim).scaled(mean)
            }
            Kind::MarkovAdd { p, .. } => p.clone(),
            Kind::LogZeta(t) => {
                let mean = t.mean().ok_or_else(|| {
                    Error::MeanUnavailable(format!(
                        "log-zeta diagonal with beta = {} has infinite mean",
                        t.beta()
                    ))
                })?;
                Matrix::identity(self.dim).scaled(mean)
            }
            Kind::Nonhomogeneous(s) => s.mean_at(n),
            Kind::ColumnScaled { inner, scale } => {
                let mut m = inner.mean_matrix(n)?;
                for k in 0..self.dim {
                    for (x, a) in m.row_mut(k).iter_mut().zip(scale) {
                        *x *= a;
                    }
                }
                m
            }
        })
    }

    /// Entries that can be nonzero with positive probability.
    pub fn structure(&self) -> StructureMatrix {
        match &self.kind {
            Kind::Deterministic(h) => StructureMatrix::from_matrix(h),
            Kind::FiniteDiscrete { outcomes, probs, .. } => outcomes
                .iter()
                .zip(probs)
                .filter(|(_, p)| **p > 0.0)
                .map(|(o, _)| StructureMatrix::from_matrix(o))
                .reduce(|a, b| a.union(&b))
                .expect("probabilities sum to one"),
            Kind::DiagonalIid { values, probs, .. } => {
                let any = values.iter().zip(probs).any(|(v, p)| *v != 0.0 && *p > 0.0);
                StructureMatrix::from_matrix(&Matrix::identity(self.dim).scaled(if any { 1.0 } else { 0.0 }))
            }
            Kind::MarkovAdd { p, .. } => StructureMatrix::from_matrix(p),
            Kind::LogZeta(_) => StructureMatrix::from_matrix(&Matrix::identity(self.dim)),
            Kind::Nonhomogeneous(s) => {
                StructureMatrix::from_matrix(s.base()).union(&StructureMatrix::from_matrix(s.perturbation()))
            }
            Kind::ColumnScaled { inner, .. } => inner.structure(),
        }
    }

    /// Finite-support law of row `k` of `D_n`, or `None` for unbounded support.
    pub fn row_distribution(&self, k: usize, n: u64) -> Option<Vec<(Vec<f64>, f64)>> {
        let d = self.dim;
        match &self.kind {
            Kind::Deterministic(h) => Some(vec![(h.row(k).to_vec(), 1.0)]),
            Kind::FiniteDiscrete { outcomes, probs, .. } => Some(
                outcomes
                    .iter()
                    .zip(probs)
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(o, p)| (o.row(k).to_vec(), *p))
                    .collect(),
            ),
            Kind::DiagonalIid { values, probs, .. } => Some(
                values
                    .iter()
                    .zip(probs)
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(v, p)| {
                        let mut row = vec![0.0; d];
                        row[k] = *v;
                        (row, *p)
                    })
                    .collect(),
            ),
            Kind::MarkovAdd { p, .. } => Some(
                (0..d)
                    .filter(|&q| p[(k, q)] > 0.0)
                    .map(|q| {
                        let mut row = vec![0.0; d];
                        row[q] = 1.0;
                        (row, p[(k, q)])
                    })
                    .collect(),
            ),
            Kind::LogZeta(_) => None,
            Kind::Nonhomogeneous(s) => Some(vec![(s.mean_at(n).row(k).to_vec(), 1.0)]),
            Kind::ColumnScaled { inner, scale } => inner.row_distribution(k, n).map(|rows| {
                rows.into_iter()
                    .map(|(r, p)| (r.iter().zip(scale).map(|(x, a)| x * a).collect(), p))
                    .collect()
            }),
        }
    }
}
