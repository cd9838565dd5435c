//! The urn recursion `Y_n = Y_{n-1} + X_n D_n` and its martingale bookkeeping.

use std::io::{self, Write};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::policies::ReplacementSpec;
use crate::seed::{rng_from_seed, UrnRng};

/// `α(Y) = Σ_k Y_k^+`.
pub fn positive_mass(y: &[f64]) -> f64 {
    y.iter().map(|x| x.max(0.0)).sum()
}

/// Draw probabilities `Y^+ / Σ Y^+`, or `fallback` when no count is positive.
pub fn selection_probabilities(y: &[f64], fallback: &[f64]) -> Vec<f64> {
    let total = positive_mass(y);
    if total > 0.0 {
        y.iter().map(|x| x.max(0.0) / total).collect()
    } else {
        fallback.to_vec()
    }
}

/// Color chosen by inverse CDF over `selection_probabilities(y, fallback)`.
pub fn select_color(y: &[f64], fallback: &[f64], u: f64) -> usize {
    let total = positive_mass(y);
    if total > 0.0 {
        walk(y.iter().map(|x| x.max(0.0)), u * total)
    } else {
        walk(fallback.iter().copied(), u * fallback.iter().sum::<f64>())
    }
}

/// First index whose running sum exceeds `target`; rounding past the end
/// lands on the last index with positive weight.
fn walk(weights: impl Iterator<Item = f64>, target: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, w) in weights.enumerate() {
        if w > 0.0 {
            last_positive = k;
        }
        acc += w;
        if acc > target {
            return k;
        }
    }
    last_positive
}

fn check_fallback(p: &[f64], d: usize) -> Result<()> {
    if p.len() != d {
        return Err(Error::Invalid(format!("fallback_p: length {} differs from d = {d}", p.len())));
    }
    if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid("fallback_p: must be a probability vector".into()));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct UrnState {
    pub y: Vec<f64>,
    pub n: u64,
    pub counts: Vec<u64>,
    pub fallback_p: Vec<f64>,
    pub rng: UrnRng,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub drawn: usize,
    pub d: Matrix,
    pub y_after: Vec<f64>,
}

impl UrnState {
    /// Fresh urn with a uniform fallback vector.
    pub fn new(y0: Vec<f64>, seed: u64) -> Result<Self> {
        let d = y0.len();
        Self::with_fallback(y0, vec![1.0 / d as f64; d], seed)
    }

    pub fn with_fallback(y0: Vec<f64>, fallback_p: Vec<f64>, seed: u64) -> Result<Self> {
        Self::with_rng(y0, fallback_p, rng_from_seed(seed))
    }

    pub fn with_rng(y0: Vec<f64>, fallback_p: Vec<f64>, rng: UrnRng) -> Result<Self> {
        let d = y0.len();
        if d == 0 || d > crate::spectral::MAX_DIM {
            return Err(Error::Invalid(format!("Y0: dimension {d} outside 1..={}", crate::spectral::MAX_DIM)));
        }
        if let Some(k) = y0.iter().position(|x| !x.is_finite()) {
            return Err(Error::Invalid(format!("Y0[{k}]: not finite")));
        }
        check_fallback(&fallback_p, d)?;
        Ok(Self { y: y0, n: 0, counts: vec![0; d], fallback_p, rng })
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    pub fn alpha(&self) -> f64 {
        positive_mass(&self.y)
    }

    /// One step without allocating; `scratch` receives `D_{n+1}`.
    pub fn advance(&mut self, policy: &ReplacementSpec, scratch: &mut Matrix) -> usize {
        let u: f64 = self.rng.random();
        let k = select_color(&self.y, &self.fallback_p, u);
        policy.sample_into(self.n + 1, &mut self.rng, scratch);
        for (y, x) in self.y.iter_mut().zip(scratch.row(k)) {
            *y += x;
        }
        self.counts[k] += 1;
        self.n += 1;
        k
    }

    pub fn step(&mut self, policy: &ReplacementSpec) -> StepRecord {
        let mut d = Matrix::zeros(self.dim());
        let drawn = self.advance(policy, &mut d);
        StepRecord { drawn, d, y_after: self.y.clone() }
    }
}

/// Running martingale decomposition of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub s: Vec<f64>,
    pub q: f64,
    pub theta: Vec<f64>,
    /// `Σ_m selection_probabilities(Y_{m-1}) H_m`.
    pub compensator: Vec<f64>,
    /// Steps where `α(Y) = 0` contributed nothing to `q`.
    pub q_skipped: u64,
}

impl Diagnostics {
    pub fn new(y0: &[f64]) -> Self {
        let d = y0.len();
        Self {
            m1: vec![0.0; d],
            m2: vec![0.0; d],
            s: vec![0.0; d],
            q: 0.0,
            theta: y0.iter().map(|x| x.max(0.0)).collect(),
            compensator: vec![0.0; d],
            q_skipped: 0,
        }
    }
}

/// Folds one step into `diag`. `y_before` is `Y_{n-1}`, `d` the sampled
/// `D_n`, `h` the mean `H_n`, and `n` the new step index.
pub fn update_diagnostics(
    diag: &mut Diagnostics,
    y_before: &[f64],
    fallback: &[f64],
    drawn: usize,
    d: &Matrix,
    h: &Matrix,
    n: u64,
) {
    let dim = y_before.len();
    let p = selection_probabilities(y_before, fallback);
    let ph = h.left_mul(&p);
    let alpha = positive_mass(y_before);
    if alpha > 0.0 {
        diag.q += 1.0 / alpha;
    } else {
        diag.q_skipped += 1;
        log::debug!("step {n}: no positive counts, q_n increment skipped");
    }
    for j in 0..dim {
        let x = if j == drawn { 1.0 } else { 0.0 };
        let dm1 = x - p[j];
        // ΔM1·H_n, ΔM2 = X_n (D_n - H_n)
        let dm1h: f64 = (0..dim).map(|k| (if k == drawn { 1.0 } else { 0.0 } - p[k]) * h[(k, j)]).sum();
        let dm2 = d[(drawn, j)] - h[(drawn, j)];
        let y_after = y_before[j] + d[(drawn, j)];
        let dyplus = y_after.max(0.0) - y_before[j].max(0.0);
        diag.m1[j] += dm1;
        diag.m2[j] += dm2;
        diag.s[j] += dm1h + dm2 + (dyplus - d[(drawn, j)]);
        diag.compensator[j] += ph[j];
        diag.theta[j] = y_after.max(0.0) / n as f64;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Snapshot {
    pub n: u64,
    pub y: Vec<f64>,
    pub counts: Vec<u64>,
    pub diagnostics: Option<Diagnostics>,
}

fn check_checkpoints(checkpoints: &[u64], n_steps: u64) -> Result<()> {
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("checkpoints must be strictly increasing".into()));
    }
    if let Some(&c) = checkpoints.iter().find(|&&c| c == 0 || c > n_steps) {
        return Err(Error::Precondition(format!("checkpoint {c} outside [1, {n_steps}]")));
    }
    Ok(())
}

/// Runs `n_steps` steps, recording a snapshot at each checkpoint.
/// With `diagnostics`, the policy must have an analytic mean.
pub fn run_trajectory(
    state: &mut UrnState,
    policy: &ReplacementSpec,
    n_steps: u64,
    checkpoints: &[u64],
    diagnostics: bool,
) -> Result<Vec<Snapshot>> {
    if policy.dim() != state.dim() {
        return Err(Error::Invalid(format!(
            "policy dimension {} differs from urn dimension {}",
            policy.dim(),
            state.dim()
        )));
    }
    check_checkpoints(checkpoints, n_steps)?;
    let dim = state.dim();
    let mut diag = if diagnostics {
        if !policy.has_analytic_mean() {
            return Err(Error::MeanUnavailable("diagnostics need the policy's analytic mean".into()));
        }
        Some(Diagnostics::new(&state.y))
    } else {
        None
    };
    let fixed_mean = if diagnostics && policy.is_homogeneous() { Some(policy.mean_matrix(1)?) } else { None };
    let mut scratch = Matrix::zeros(dim);
    let mut y_before = vec![0.0; dim];
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().peekable();
    let start = state.n;
    for _ in 0..n_steps {
        if let Some(diag) = diag.as_mut() {
            y_before.copy_from_slice(&state.y);
            let drawn = state.advance(policy, &mut scratch);
            let h = match &fixed_mean {
                Some(h) => std::borrow::Cow::Borrowed(h),
                None => std::borrow::Cow::Owned(policy.mean_matrix(state.n)?),
            };
            update_diagnostics(diag, &y_before, &state.fallback_p, drawn, &scratch, &h, state.n);
        } else {
            state.advance(policy, &mut scratch);
        }
        if next.peek().is_some_and(|&&c| c == state.n - start) {
            next.next();
            out.push(Snapshot {
                n: state.n,
                y: state.y.clone(),
                counts: state.counts.clone(),
                diagnostics: diag.clone(),
            });
        }
    }
    if let Some(d) = &diag {
        if d.q_skipped > 0 {
            log::info!("q_n skipped {} steps with no positive counts", d.q_skipped);
        }
    }
    Ok(out)
}

/// `(E[Y_{n+1} u | F_n], Y u (1 + λ/α(Y)))` for a right eigenvector `u` of `H`.
pub fn conditional_mean_identity(y: &[f64], h: &Matrix, u: &[f64], lambda_h: f64) -> Result<(f64, f64)> {
    let d = y.len();
    if h.dim() != d || u.len() != d {
        return Err(Error::Precondition("dimension mismatch".into()));
    }
    if y.iter().any(|x| *x < 0.0) {
        return Err(Error::Precondition("Y must be nonnegative".into()));
    }
    let alpha = positive_mass(y);
    if alpha <= 0.0 {
        return Err(Error::Precondition("alpha(Y) must be positive".into()));
    }
    let hu = h.right_mul(u);
    let scale = h.norm().max(1.0) * u.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
    if hu.iter().zip(u).any(|(a, b)| (a - lambda_h * b).abs() > 1e-9 * scale) {
        return Err(Error::Precondition("u is not a right eigenvector of H for lambda_H".into()));
    }
    let yu = dot(y, u);
    let lhs = yu + y.iter().zip(&hu).map(|(yk, hk)| yk / alpha * hk).sum::<f64>();
    let rhs = yu * (1.0 + lambda_h / alpha);
    Ok((lhs, rhs))
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes snapshots as CSV: `n, Y_*, N_*` and, when present, `q, s_*`.
pub fn write_trajectory_csv<W: Write>(mut w: W, dim: usize, snapshots: &[Snapshot]) -> io::Result<()> {
    let with_diag = snapshots.first().is_some_and(|s| s.diagnostics.is_some());
    let mut header = vec!["n".to_string()];
    header.extend((1..=dim).map(|k| format!("Y_{k}")));
    header.extend((1..=dim).map(|k| format!("N_{k}")));
    if with_diag {
        header.push("q".into());
        header.extend((1..=dim).map(|k| format!("s_{k}")));
    }
    writeln!(w, "{}", header.join(","))?;
    for s in snapshots {
        let mut row = vec![s.n.to_string()];
        row.extend(s.y.iter().map(|x| fmt(*x)));
        row.extend(s.counts.iter().map(|c| c.to_string()));
        if let Some(d) = &s.diagnostics {
            row.push(fmt(d.q));
            row.extend(d.s.iter().map(|x| fmt(*x)));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
