//! Seeded Monte Carlo ensembles and the verdicts built on them.
//!
//! Replication `r` draws from `replication_rng(master_seed, r)`, so its path
//! does not depend on how replications are scheduled. Per-replication results
//! are merged in replication order, which makes a summary bit-identical across
//! [`Execution`] modes and thread counts.

mod verdicts;

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

pub use verdicts::*;

use crate::error::{Error, Result};
use crate::policies::{PolicyConfig, ReplacementSpec};
use crate::seed::replication_rng;
use crate::spectral::{dist_to_limit_set, MeanMatrix, SpectralProfile, StructureMatrix};
use crate::urn::{run_trajectory, UrnState};

/// Ratio between consecutive default checkpoints.
pub const CHECKPOINT_RATIO: f64 = 1.778_279_410_038_922_8; // 10^(1/4)
pub const FIRST_CHECKPOINT: u64 = 100;

/// Geometric checkpoints `100 * 10^(k/4)` below `n_max`, followed by `n_max`.
pub fn default_checkpoints(n_max: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let c = (FIRST_CHECKPOINT as f64 * 10f64.powf(k as f64 / 4.0)).round() as u64;
        if c >= n_max {
            break;
        }
        if out.last() != Some(&c) {
            out.push(c);
        }
        k += 1;
    }
    if n_max > 0 {
        out.push(n_max);
    }
    out
}

/// JSON description of an ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub policy: PolicyConfig,
    #[serde(rename = "Y0")]
    pub y0: Vec<f64>,
    pub fallback_p: Option<Vec<f64>>,
    pub n_max: u64,
    pub checkpoints: Option<Vec<u64>>,
    #[serde(default = "one")]
    pub replications: u64,
    #[serde(default)]
    pub master_seed: u64,
    /// Overrides the estimated size of the secondary Jordan block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_sec: Option<usize>,
}

fn one() -> u64 {
    1
}

impl ExperimentConfig {
    pub fn new(policy: PolicyConfig, y0: Vec<f64>, n_max: u64, replications: u64, master_seed: u64) -> Self {
        Self { policy, y0, fallback_p: None, n_max, checkpoints: None, replications, master_seed, nu_sec: None }
    }

    pub fn with_checkpoints(mut self, checkpoints: Vec<u64>) -> Self {
        self.checkpoints = Some(checkpoints);
        self
    }

    /// Copy with every default written out.
    pub fn normalized(&self) -> Self {
        let d = self.y0.len().max(1);
        let mut c = self.clone();
        c.fallback_p.get_or_insert_with(|| vec![1.0 / d as f64; d]);
        c.checkpoints.get_or_insert_with(|| default_checkpoints(self.n_max));
        c
    }
}

/// A validated, compiled experiment.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub policy: ReplacementSpec,
    pub checkpoints: Vec<u64>,
    pub fallback_p: Vec<f64>,
    /// Profile of the (limiting) mean matrix, when it exists.
    pub profile: Option<SpectralProfile>,
    /// Why `profile` is absent.
    pub profile_error: Option<String>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let config = config.normalized();
        let policy = ReplacementSpec::from_config(&config.policy)?;
        if config.y0.len() != policy.dim() {
            return Err(Error::Invalid(format!(
                "Y0: length {} differs from policy dimension {}",
                config.y0.len(),
                policy.dim()
            )));
        }
        if config.replications == 0 {
            return Err(Error::Invalid("replications: must be at least 1".into()));
        }
        let checkpoints = config.checkpoints.clone().unwrap_or_default();
        if checkpoints.windows(2).any(|w| w[0] >= w[1]) || checkpoints.first() == Some(&0) {
            return Err(Error::Invalid("checkpoints: must be positive and strictly increasing".into()));
        }
        if checkpoints.last() != Some(&config.n_max) {
            return Err(Error::Invalid("checkpoints: last checkpoint must equal n_max".into()));
        }
        let fallback_p = config.fallback_p.clone().unwrap_or_default();
        // validates fallback_p and Y0
        UrnState::with_fallback(config.y0.clone(), fallback_p.clone(), 0)?;
        let (profile, profile_error) = match limit_profile(&policy, config.nu_sec) {
            Ok(p) => (Some(p), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Ok(Self { config, policy, checkpoints, fallback_p, profile, profile_error })
    }

    /// Recomputes the profile with extra nonzero entries in the class pattern.
    pub fn with_structure(mut self, extra: &StructureMatrix) -> Self {
        (self.profile, self.profile_error) = match limit_profile_with(&self.policy, Some(extra), self.config.nu_sec) {
            Ok(p) => (Some(p), None),
            Err(e) => (None, Some(e.to_string())),
        };
        self
    }

    pub fn dim(&self) -> usize {
        self.policy.dim()
    }

    pub fn require_profile(&self) -> Result<&SpectralProfile> {
        self.profile.as_ref().ok_or_else(|| {
            Error::Precondition(format!(
                "no spectral profile: {}",
                self.profile_error.as_deref().unwrap_or("unknown reason")
            ))
        })
    }
}

/// Profile of `H`, or of the base matrix for a drifting schedule.
pub fn limit_profile(policy: &ReplacementSpec, nu_sec: Option<usize>) -> Result<SpectralProfile> {
    limit_profile_with(policy, None, nu_sec)
}

/// [`limit_profile`] with extra nonzero entries added to the policy's pattern.
pub fn limit_profile_with(
    policy: &ReplacementSpec,
    extra: Option<&StructureMatrix>,
    nu_sec: Option<usize>,
) -> Result<SpectralProfile> {
    let h = match policy.drift_schedule() {
        Some(s) => s.base().clone(),
        None => policy.mean_matrix(1)?,
    };
    let mut structure = policy.structure();
    if let Some(e) = extra {
        if e.dim() != structure.dim() {
            return Err(Error::Invalid("structure: dimension differs from the policy".into()));
        }
        structure = structure.union(e);
    }
    SpectralProfile::analyze_with(&MeanMatrix::new(h)?, Some(&structure), nu_sec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Execution::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Execution::Sequential
        }
    }
}

/// Per-checkpoint values of one replication.
#[derive(Clone, Debug)]
struct Replication {
    y_over_n: Vec<Vec<f64>>,
    counts_over_n: Vec<Vec<f64>>,
    dist_y: Vec<f64>,
    dist_prop: Vec<f64>,
    dist_n: Vec<f64>,
    terminal_y: Vec<f64>,
}

fn run_replication(exp: &Experiment, r: u64) -> Result<Replication> {
    let rng = replication_rng(exp.config.master_seed, r);
    let mut state = UrnState::with_rng(exp.config.y0.clone(), exp.fallback_p.clone(), rng)?;
    let snaps = run_trajectory(&mut state, &exp.policy, exp.config.n_max, &exp.checkpoints, false)?;
    let mut rep = Replication {
        y_over_n: Vec::with_capacity(snaps.len()),
        counts_over_n: Vec::with_capacity(snaps.len()),
        dist_y: Vec::new(),
        dist_prop: Vec::new(),
        dist_n: Vec::new(),
        terminal_y: state.y.clone(),
    };
    for s in &snaps {
        let n = s.n as f64;
        let y: Vec<f64> = s.y.iter().map(|x| x / n).collect();
        let c: Vec<f64> = s.counts.iter().map(|x| *x as f64 / n).collect();
        if let Some(p) = &exp.profile {
            let mass: f64 = s.y.iter().map(|x| x.max(0.0)).sum();
            let prop: Vec<f64> = if mass > 0.0 {
                s.y.iter().map(|x| x.max(0.0) / mass).collect()
            } else {
                exp.fallback_p.clone()
            };
            rep.dist_y.push(dist_to_limit_set(&y, p, p.lambda_h));
            rep.dist_prop.push(dist_to_limit_set(&prop, p, 1.0));
            rep.dist_n.push(dist_to_limit_set(&c, p, 1.0));
        }
        rep.y_over_n.push(y);
        rep.counts_over_n.push(c);
    }
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Quantiles {
    pub q05: Vec<f64>,
    pub median: Vec<f64>,
    pub q95: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckpointStats {
    pub n: u64,
    pub mean_y_over_n: Vec<f64>,
    pub y_over_n_quantiles: Quantiles,
    pub mean_counts_over_n: Vec<f64>,
    pub counts_over_n_quantiles: Quantiles,
    /// Mean of `dist(Y_n/n, λ_H S_H)`.
    pub dist_y: Option<MeanSe>,
    /// Mean of `dist(Y_n^+/α(Y_n), S_H)`.
    pub dist_prop: Option<MeanSe>,
    /// Mean of `dist(N_n/n, S_H)`.
    pub dist_n: Option<MeanSe>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicationFailure {
    pub replication: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub master_seed: u64,
    pub replications: u64,
    pub completed: u64,
    pub checkpoints: Vec<CheckpointStats>,
    /// Final `Y` of each completed replication, in replication order.
    pub terminal_y: Vec<Vec<f64>>,
    /// Final `dist(Y_n/n, λ_H S_H)` per completed replication.
    pub terminal_dist_y: Vec<f64>,
    pub failures: Vec<ReplicationFailure>,
}

impl EnsembleSummary {
    pub fn last(&self) -> Option<&CheckpointStats> {
        self.checkpoints.last()
    }

    pub fn at(&self, n: u64) -> Option<&CheckpointStats> {
        self.checkpoints.iter().find(|c| c.n == n)
    }

    pub fn write_json<W: Write>(&self, w: W) -> io::Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(io::Error::other)
    }

    /// Flat CSV, one row per checkpoint and statistic.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "n,statistic,value")?;
        for c in &self.checkpoints {
            let mut row = |name: String, v: f64| writeln!(w, "{},{},{:.16e}", c.n, name, v);
            let vectors = [
                ("mean_y_over_n", &c.mean_y_over_n),
                ("q05_y_over_n", &c.y_over_n_quantiles.q05),
                ("median_y_over_n", &c.y_over_n_quantiles.median),
                ("q95_y_over_n", &c.y_over_n_quantiles.q95),
                ("mean_counts_over_n", &c.mean_counts_over_n),
                ("median_counts_over_n", &c.counts_over_n_quantiles.median),
            ];
            for (name, v) in vectors {
                for (k, x) in v.iter().enumerate() {
                    row(format!("{name}_{}", k + 1), *x)?;
                }
            }
            for (name, s) in [("dist_y", &c.dist_y), ("dist_prop", &c.dist_prop), ("dist_n", &c.dist_n)] {
                if let Some(s) = s {
                    row(format!("{name}_mean"), s.mean)?;
                    row(format!("{name}_se"), s.std_error)?;
                }
            }
        }
        Ok(())
    }
}

fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    MeanSe { mean, std_error: (var / n).sqrt() }
}

fn quantiles(rows: &[&Vec<f64>], dim: usize) -> Quantiles {
    let mut q = Quantiles { q05: vec![], median: vec![], q95: vec![] };
    for k in 0..dim {
        let mut data = Data::new(rows.iter().map(|r| r[k]).collect::<Vec<_>>());
        q.q05.push(data.quantile(0.05));
        q.median.push(data.quantile(0.5));
        q.q95.push(data.quantile(0.95));
    }
    q
}

fn component_mean(rows: &[&Vec<f64>], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r.iter()) {
            *a += b;
        }
    }
    m.iter().map(|x| x / rows.len() as f64).collect()
}

fn run_all(exp: &Experiment, execution: Execution) -> Vec<Result<Replication>> {
    let reps = exp.config.replications;
    match execution {
        Execution::Sequential => (0..reps).map(|r| run_replication(exp, r)).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..reps).into_par_iter().map(|r| run_replication(exp, r)).collect()
        }
    }
}

/// Runs every replication and merges the results in replication order.
pub fn run_ensemble(exp: &Experiment, execution: Execution) -> EnsembleSummary {
    let outcomes = run_all(exp, execution);
    let dim = exp.dim();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(rep) => ok.push(rep),
            Err(e) => {
                log::warn!("replication {r} failed: {e}");
                failures.push(ReplicationFailure { replication: r as u64, error: e.to_string() })
            }
        }
    }
    let checkpoints = if ok.is_empty() {
        Vec::new()
    } else {
        exp.checkpoints
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let ys: Vec<&Vec<f64>> = ok.iter().map(|r| &r.y_over_n[i]).collect();
                let cs: Vec<&Vec<f64>> = ok.iter().map(|r| &r.counts_over_n[i]).collect();
                let dist = |f: fn(&Replication) -> &Vec<f64>| {
                    exp.profile.as_ref().map(|_| mean_se(&ok.iter().map(|r| f(r)[i]).collect::<Vec<_>>()))
                };
                CheckpointStats {
                    n,
                    mean_y_over_n: component_mean(&ys, dim),
                    y_over_n_quantiles: quantiles(&ys, dim),
                    mean_counts_over_n: component_mean(&cs, dim),
                    counts_over_n_quantiles: quantiles(&cs, dim),
                    dist_y: dist(|r| &r.dist_y),
                    dist_prop: dist(|r| &r.dist_prop),
                    dist_n: dist(|r| &r.dist_n),
                }
            })
            .collect()
    };
    EnsembleSummary {
        master_seed: exp.config.master_seed,
        replications: exp.config.replications,
        completed: ok.len() as u64,
        checkpoints,
        terminal_dist_y: ok.iter().filter_map(|r| r.dist_y.last().copied()).collect(),
        terminal_y: ok.into_iter().map(|r| r.terminal_y).collect(),
        failures,
    }
}
