//! Statistical verdicts over ensembles.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};
use statrs::statistics::{Data, Median};

use super::{run_ensemble, EnsembleSummary, Execution, Experiment, ExperimentConfig};
use crate::branching::{exact_urn_law, LawComparison};
use crate::error::{Error, Result};
use crate::matrix::dot;
use crate::policies::{drift_trace, DriftMode, DriftTrace, ReplacementSpec};
use crate::seed::replication_rng;
use crate::spectral::SpectralProfile;
use crate::stats::{ks_p_value, ks_statistic, pearson_chi_square};
use crate::urn::{run_trajectory, UrnState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 1,
            Verdict::Inconclusive => 2,
        }
    }

    /// Fails if any part fails, otherwise inconclusive if any part is.
    pub fn all(parts: &[Verdict]) -> Self {
        if parts.contains(&Verdict::Fail) {
            Verdict::Fail
        } else if parts.contains(&Verdict::Inconclusive) {
            Verdict::Inconclusive
        } else {
            Verdict::Pass
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Bound on the mean of `dist(Y_n/n, λ_H S_H)` at the last checkpoint.
    pub dist_y: f64,
    /// Bound on the mean of `dist(N_n/n, S_H)` at the last checkpoint.
    pub dist_n: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { dist_y: 0.1, dist_n: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub n: u64,
    pub dist_y: Option<f64>,
    pub dist_n: Option<f64>,
    pub tolerances: Tolerances,
    pub verdict: Verdict,
}

/// Checks the last checkpoint's mean distances against `tol`.
pub fn convergence_verdict(summary: &EnsembleSummary, tol: Tolerances) -> ConvergenceReport {
    let last = summary.last();
    let dist_y = last.and_then(|c| c.dist_y.as_ref()).map(|s| s.mean);
    let dist_n = last.and_then(|c| c.dist_n.as_ref()).map(|s| s.mean);
    let verdict = match (dist_y, dist_n) {
        (Some(y), Some(n)) => Verdict::from_bool(y < tol.dist_y && n < tol.dist_n),
        _ => Verdict::Inconclusive,
    };
    ConvergenceReport { n: last.map_or(0, |c| c.n), dist_y, dist_n, tolerances: tol, verdict }
}

/// `ϖ_j = Y_n u_j / Σ_i Y_n u_i` for each completed replication.
pub fn varpi_samples(summary: &EnsembleSummary, profile: &SpectralProfile) -> Result<Vec<Vec<f64>>> {
    if profile.nu1 < 2 {
        return Err(Error::NotReducible);
    }
    Ok(summary.terminal_y.iter().map(|y| varpi(y, profile)).collect())
}

pub fn varpi(y: &[f64], profile: &SpectralProfile) -> Vec<f64> {
    let w: Vec<f64> = profile.u_basis.iter().map(|u| dot(y, u)).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

pub const ATOM_MIN_SAMPLES: usize = 500;
pub const ATOM_MAX_MULTIPLICITY: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AtomTest {
    pub samples: usize,
    pub max_multiplicity: usize,
    pub min_value: f64,
    pub verdict: Verdict,
}

/// Largest number of samples equal after rounding to 12 decimals, and the
/// smallest sample. Passes iff the multiplicity is at most 5 and all samples
/// are positive.
pub fn atom_and_positivity_test(samples: &[f64]) -> Result<AtomTest> {
    if samples.len() < ATOM_MIN_SAMPLES {
        return Err(Error::Precondition(format!(
            "atom test needs at least {ATOM_MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let mut counts: HashMap<i64, usize> = HashMap::new();
    for x in samples {
        *counts.entry((x * 1e12).round() as i64).or_default() += 1;
    }
    let max_multiplicity = counts.values().copied().max().unwrap_or(0);
    let min_value = samples.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(AtomTest {
        samples: samples.len(),
        max_multiplicity,
        min_value,
        verdict: Verdict::from_bool(max_multiplicity <= ATOM_MAX_MULTIPLICITY && min_value > 0.0),
    })
}

/// Reference law for `ϖ_1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarpiReference {
    Beta([f64; 2]),
}

pub const VARPI_KS_THRESHOLD: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KsCheck {
    pub statistic: f64,
    pub p_value: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarpiReport {
    pub samples: usize,
    pub mean: Vec<f64>,
    /// Largest `|Σ_j ϖ_j - 1|` over replications.
    pub normalization_error: f64,
    pub ks: Option<KsCheck>,
    pub atom: Option<AtomTest>,
    pub verdict: Verdict,
}

/// Limit-law checks on `ϖ_1`: KS against `reference`, atoms, positivity.
pub fn verify_varpi(
    summary: &EnsembleSummary,
    profile: &SpectralProfile,
    reference: Option<VarpiReference>,
) -> Result<VarpiReport> {
    let samples = varpi_samples(summary, profile)?;
    let first: Vec<f64> = samples.iter().map(|w| w[0]).collect();
    let nu = profile.nu1;
    let mean = (0..nu).map(|j| samples.iter().map(|w| w[j]).sum::<f64>() / samples.len() as f64).collect();
    let normalization_error =
        samples.iter().map(|w| (w.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    let in_unit = samples.iter().flatten().all(|x| (-1e-12..=1.0 + 1e-12).contains(x));
    let ks = reference.map(|VarpiReference::Beta([a, b])| {
        let law = Beta::new(a, b).expect("positive shape parameters");
        let statistic = ks_statistic(&first, |x| law.cdf(x.clamp(0.0, 1.0)));
        KsCheck {
            statistic,
            p_value: ks_p_value(statistic, first.len()),
            threshold: VARPI_KS_THRESHOLD,
            verdict: Verdict::from_bool(statistic < VARPI_KS_THRESHOLD),
        }
    });
    let atom = atom_and_positivity_test(&first).ok();
    let mut parts = vec![Verdict::from_bool(normalization_error <= 1e-9 && in_unit)];
    parts.extend(ks.as_ref().map(|k| k.verdict));
    parts.push(atom.as_ref().map_or(Verdict::Inconclusive, |a| a.verdict));
    Ok(VarpiReport { samples: samples.len(), mean, normalization_error, ks, atom, verdict: Verdict::all(&parts) })
}

/// Exact law of `Y_n` against `reps` urn simulations.
pub fn exact_law_check(policy: &ReplacementSpec, y0: &[u64], n: u64, reps: u64, master_seed: u64) -> Result<LawComparison> {
    let law = exact_urn_law(policy, y0, n)?;
    let index: HashMap<Vec<u64>, usize> = law.iter().enumerate().map(|(i, (s, _))| (s.clone(), i)).collect();
    let mut observed = vec![0u64; law.len()];
    let mut outside = 0;
    let y0f: Vec<f64> = y0.iter().map(|x| *x as f64).collect();
    let d = y0.len();
    for r in 0..reps {
        let mut state = UrnState::with_rng(y0f.clone(), vec![1.0 / d as f64; d], replication_rng(master_seed, r))?;
        run_trajectory(&mut state, policy, n, &[], false)?;
        let key: Vec<u64> = state.y.iter().map(|x| *x as u64).collect();
        match index.get(&key) {
            Some(&i) if state.y.iter().all(|x| x.fract() == 0.0 && *x >= 0.0) => observed[i] += 1,
            _ => outside += 1,
        }
    }
    let probs: Vec<f64> = law.iter().map(|(_, p)| *p).collect();
    Ok(LawComparison { n, reps, states: law.len(), chi_square: pearson_chi_square(&observed, &probs, outside) })
}

pub const RATE_TOLERANCE: f64 = 0.15;
pub const RATE_MIN_CHECKPOINTS: usize = 6;
pub const RATE_MIN_DECADES: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square of the regression residuals.
    pub residual: f64,
}

/// Least squares of `ln y` on `ln n`; `None` if some `y` is not positive.
pub fn fit_log_log(ns: &[f64], ys: &[f64]) -> Option<LogLogFit> {
    if ys.iter().any(|y| !(*y > 0.0)) || ns.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let ls: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ls.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ls).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs.iter().zip(&ls).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum::<f64>() / m).sqrt();
    Some(LogLogFit { slope, intercept, residual })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    /// `None` when some mean distance is exactly zero.
    pub fit: Option<LogLogFit>,
    pub expected_slope: f64,
    /// Set when the distances vanish and no slope can be fitted.
    pub degenerate: bool,
    pub tolerance: f64,
    pub verdict: Verdict,
}

/// `ρ - 1` when `ρ > 1/2`, otherwise `-1/2`.
pub fn expected_rate_slope(profile: &SpectralProfile) -> f64 {
    match profile.rho {
        Some(r) if r > 0.5 => r - 1.0,
        _ => -0.5,
    }
}

/// Slope of log mean `dist(Y_n/n, λ_H S_H)` against log n.
pub fn fit_rate(summary: &EnsembleSummary, profile: &SpectralProfile) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = summary
        .checkpoints
        .iter()
        .filter_map(|c| c.dist_y.as_ref().map(|d| (c.n as f64, d.mean)))
        .collect();
    let decades = match (pts.first(), pts.last()) {
        (Some(a), Some(b)) => (b.0 / a.0).log10(),
        _ => 0.0,
    };
    if pts.len() < RATE_MIN_CHECKPOINTS || decades < RATE_MIN_DECADES {
        return Err(Error::InsufficientCheckpoints { count: pts.len(), decades });
    }
    let (ns, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let fit = fit_log_log(&ns, &ys);
    let expected_slope = expected_rate_slope(profile);
    let verdict = match &fit {
        Some(f) => Verdict::from_bool((f.slope - expected_slope).abs() <= RATE_TOLERANCE),
        None => Verdict::Inconclusive,
    };
    Ok(RateFit { degenerate: fit.is_none(), fit, expected_slope, tolerance: RATE_TOLERANCE, verdict })
}

pub const PROBE_POINTS: [u64; 3] = [1_000, 10_000, 100_000];
pub const PROBE_DIVERGENT_RATIO: f64 = 5.0;
pub const PROBE_STABLE_RANGE: (f64, f64) = (0.5, 2.0);

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivergenceReport {
    pub points: Vec<u64>,
    /// Median over replications of `Y_{n,k}/n`, one vector per point.
    pub medians: Vec<Vec<f64>>,
    /// `median(last) / median(first)` per color.
    pub growth_ratio: Vec<f64>,
    /// Whether `E||D||` is finite, when known in closed form.
    pub finite_mean: Option<bool>,
    pub verdict: Verdict,
}

/// Runs the ensemble to the probe points and reports how `Y_n/n` grows.
/// The verdict expects growth beyond 5x when the mean is infinite and a ratio
/// in `[0.5, 2]` otherwise.
pub fn divergence_probe(config: &ExperimentConfig, execution: Execution) -> Result<DivergenceReport> {
    let mut cfg = config.clone();
    cfg.n_max = *PROBE_POINTS.last().unwrap();
    cfg.checkpoints = Some(PROBE_POINTS.to_vec());
    let exp = Experiment::new(cfg)?;
    let summary = run_ensemble(&exp, execution);
    if summary.completed == 0 {
        return Err(Error::Precondition("every replication failed".into()));
    }
    let medians: Vec<Vec<f64>> = summary.checkpoints.iter().map(|c| c.y_over_n_quantiles.median.clone()).collect();
    let (first, last) = (&medians[0], &medians[medians.len() - 1]);
    let growth_ratio: Vec<f64> = first.iter().zip(last).map(|(a, b)| b / a).collect();
    let finite_mean = exp.policy.analytic_finite_moments().map(|m| m[0]);
    let r = growth_ratio[0];
    let verdict = match finite_mean {
        Some(false) => Verdict::from_bool(r > PROBE_DIVERGENT_RATIO),
        Some(true) => Verdict::from_bool((PROBE_STABLE_RANGE.0..=PROBE_STABLE_RANGE.1).contains(&r)),
        None => Verdict::Inconclusive,
    };
    Ok(DivergenceReport { points: PROBE_POINTS.to_vec(), medians, growth_ratio, finite_mean, verdict })
}

/// Which drift hypothesis a schedule satisfies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftHypothesis {
    /// `H_n = H`: every drift condition holds.
    Homogeneous,
    /// `Σ ||H_n - H|| / n < ∞`, which also gives the Cesàro condition.
    WeightedSummable,
    /// `(1/n) Σ ||H_m - H|| → 0` while the weighted sum diverges.
    CesaroOnly,
}

impl From<DriftMode> for DriftHypothesis {
    fn from(mode: DriftMode) -> Self {
        match mode {
            DriftMode::None => Self::Homogeneous,
            DriftMode::Summable => Self::WeightedSummable,
            DriftMode::CesaroO1 => Self::CesaroOnly,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftReport {
    pub hypothesis: DriftHypothesis,
    /// `(n, mean dist(Y_n/n, λ_H S_H))` per checkpoint.
    pub distances: Vec<(u64, f64)>,
    pub trace: Vec<DriftTrace>,
    pub convergence: ConvergenceReport,
    pub verdict: Verdict,
}

/// Convergence of a drifting schedule toward the base matrix's limit set,
/// together with the analytic drift sums at each checkpoint.
pub fn nonhomogeneous_verdict(exp: &Experiment, execution: Execution, tol: Tolerances) -> Result<DriftReport> {
    let schedule = exp
        .policy
        .drift_schedule()
        .ok_or_else(|| Error::Precondition("policy has no drift schedule".into()))?;
    exp.require_profile()?;
    let summary = run_ensemble(exp, execution);
    let distances =
        summary.checkpoints.iter().filter_map(|c| c.dist_y.as_ref().map(|d| (c.n, d.mean))).collect();
    let trace = drift_trace(schedule, &exp.checkpoints)?;
    let convergence = convergence_verdict(&summary, tol);
    Ok(DriftReport {
        hypothesis: schedule.mode().into(),
        distances,
        trace,
        verdict: convergence.verdict,
        convergence,
    })
}

/// Mean of `dist` at `n_hi` below that at `n_lo`.
pub fn shrinks(summary: &EnsembleSummary, n_lo: u64, n_hi: u64) -> Option<bool> {
    let d = |n| summary.at(n).and_then(|c| c.dist_y.as_ref()).map(|s| s.mean);
    Some(d(n_hi)? < d(n_lo)?)
}

/// Median of `xs`.
pub fn median(xs: &[f64]) -> f64 {
    Data::new(xs.to_vec()).median()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng;

    #[test]
    fn log_log_fit_recovers_power_law() {
        let ns: Vec<f64> = (0..17).map(|k| 100.0 * 10f64.powf(k as f64 / 4.0)).collect();
        for s in [-0.5, -1.0 / 3.0, 0.2] {
            let ys: Vec<f64> = ns.iter().map(|n| 3.7 * n.powf(s)).collect();
            let f = fit_log_log(&ns, &ys).unwrap();
            assert!((f.slope - s).abs() < 1e-10);
            assert!(f.residual < 1e-10);
        }
        assert!(fit_log_log(&ns, &vec![0.0; ns.len()]).is_none());
    }

    #[test]
    fn atom_test_calibration() {
        let mut rng = rng_from_seed(12);
        let u: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        assert_eq!(atom_and_positivity_test(&u).unwrap().verdict, Verdict::Pass);
        let mixed: Vec<f64> = u.iter().enumerate().map(|(i, x)| if i % 2 == 0 { 0.5 } else { *x }).collect();
        assert_eq!(atom_and_positivity_test(&mixed).unwrap().verdict, Verdict::Fail);
        let constant = vec![0.3; 600];
        let t = atom_and_positivity_test(&constant).unwrap();
        assert_eq!((t.max_multiplicity, t.verdict), (600, Verdict::Fail));
        assert!(atom_and_positivity_test(&u[..100]).is_err());
    }

    #[test]
    fn verdict_combination() {
        use Verdict::*;
        assert_eq!(Verdict::all(&[Pass, Inconclusive]), Inconclusive);
        assert_eq!(Verdict::all(&[Pass, Inconclusive, Fail]), Fail);
        assert_eq!(Verdict::all(&[Pass]), Pass);
        assert_eq!([Pass, Fail, Inconclusive].map(Verdict::exit_code), [0, 1, 2]);
    }

    #[test]
    fn median_of_even_sample() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
