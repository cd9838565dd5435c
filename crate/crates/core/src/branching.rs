//! Continuous-time multitype branching process with exponential lifetimes,
//! and the check that its jump chain has the urn's law.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};

use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::policies::ReplacementSpec;
use crate::seed::{replication_rng, UrnRng};
use crate::stats::{pearson_chi_square, ChiSquareResult};
use crate::urn::selection_probabilities;

/// Upper bound on the number of states kept by [`exact_urn_law`].
pub const STATE_LIMIT: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchingState {
    pub z: Vec<u64>,
    pub t: f64,
    pub splits: u64,
    pub alpha: Vec<f64>,
    /// Deaths per type.
    pub deaths: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitRecord {
    pub split_index: u64,
    pub t: f64,
    pub z: Vec<u64>,
    /// Total rate `Σ α_k Z_k` in force during the wait that ended here.
    pub rate: f64,
}

impl BranchingState {
    pub fn new(z0: Vec<u64>, alpha: Vec<f64>) -> Result<Self> {
        if z0.is_empty() || z0.len() != alpha.len() {
            return Err(Error::Invalid("Z0 and alpha must be nonempty and of equal length".into()));
        }
        if let Some(k) = alpha.iter().position(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::Invalid(format!("alpha[{k}]: rates must be positive")));
        }
        let d = z0.len();
        Ok(Self { z: z0, t: 0.0, splits: 0, alpha, deaths: vec![0; d] })
    }

    /// Unit rates.
    pub fn unit(z0: Vec<u64>) -> Self {
        let d = z0.len();
        Self::new(z0, vec![1.0; d]).expect("unit rates are valid")
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn total_rate(&self) -> f64 {
        self.z.iter().zip(&self.alpha).map(|(z, a)| *z as f64 * a).sum()
    }
}

/// Probability that the next death is of each type: `α_k Z_k / Σ α_j Z_j`.
pub fn jump_probabilities(z: &[u64], alpha: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = z.iter().zip(alpha).map(|(z, a)| *z as f64 * a).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

fn apply_row(z: &mut [u64], row: &[f64]) -> Result<()> {
    for (zq, &x) in z.iter_mut().zip(row) {
        if x.fract() != 0.0 {
            return Err(Error::PolicySample(format!("entry {x} is not an integer")));
        }
        let next = *zq as f64 + x;
        if next < 0.0 {
            return Err(Error::PolicySample("particle count would become negative".into()));
        }
        *zq = next as u64;
    }
    Ok(())
}

fn one_split<R: Rng + ?Sized>(
    state: &mut BranchingState,
    policy: &ReplacementSpec,
    rng: &mut R,
    scratch: &mut Matrix,
) -> Result<SplitRecord> {
    let rate = state.total_rate();
    if rate <= 0.0 {
        return Err(Error::Extinction(state.splits));
    }
    let wait: f64 = rng.sample::<f64, _>(Exp1) / rate;
    let target = rng.random::<f64>() * rate;
    let mut acc = 0.0;
    let mut k = state.dim() - 1;
    for (j, (z, a)) in state.z.iter().zip(&state.alpha).enumerate() {
        acc += *z as f64 * a;
        if target < acc {
            k = j;
            break;
        }
    }
    while state.z[k] == 0 {
        k -= 1;
    }
    state.splits += 1;
    policy.sample_into(state.splits, rng, scratch);
    apply_row(&mut state.z, scratch.row(k))?;
    state.t += wait;
    state.deaths[k] += 1;
    Ok(SplitRecord { split_index: state.splits, t: state.t, z: state.z.clone(), rate })
}

/// Runs `n_splits` death events and records `Z(τ_k)` after each.
pub fn simulate_splits<R: Rng + ?Sized>(
    state: &mut BranchingState,
    policy: &ReplacementSpec,
    n_splits: u64,
    rng: &mut R,
) -> Result<Vec<SplitRecord>> {
    check_dims(state, policy)?;
    let mut scratch = Matrix::zeros(state.dim());
    (0..n_splits).map(|_| one_split(state, policy, rng, &mut scratch)).collect()
}

fn check_dims(state: &BranchingState, policy: &ReplacementSpec) -> Result<()> {
    if policy.dim() != state.dim() {
        return Err(Error::Invalid("policy and branching state differ in dimension".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LongRunComposition {
    pub composition: Vec<f64>,
    pub death_fractions: Vec<f64>,
}

/// Type composition `Z/ΣZ` and death fractions after `t_splits` events.
pub fn long_run_composition<R: Rng + ?Sized>(
    state: &mut BranchingState,
    policy: &ReplacementSpec,
    t_splits: u64,
    rng: &mut R,
) -> Result<LongRunComposition> {
    check_dims(state, policy)?;
    let mut scratch = Matrix::zeros(state.dim());
    for _ in 0..t_splits {
        one_split(state, policy, rng, &mut scratch)?;
    }
    let zt: u64 = state.z.iter().sum();
    let dt: u64 = state.deaths.iter().sum();
    Ok(LongRunComposition {
        composition: state.z.iter().map(|z| *z as f64 / zt as f64).collect(),
        death_fractions: state.deaths.iter().map(|n| *n as f64 / dt.max(1) as f64).collect(),
    })
}

/// Urn policy whose composition is `(α_1 Z_1, ..., α_d Z_d)` of the branching
/// process: mean `H diag(α)`.
pub fn rescaled_urn_policy(policy: ReplacementSpec, alpha: &[f64]) -> Result<ReplacementSpec> {
    ReplacementSpec::column_scaled(policy, alpha.to_vec())
}

/// Exact law of `Y_n` for an integer urn started at `y0`, by breadth-first
/// enumeration. States come back in lexicographic order.
pub fn exact_urn_law(policy: &ReplacementSpec, y0: &[u64], n: u64) -> Result<Vec<(Vec<u64>, f64)>> {
    let d = y0.len();
    if policy.dim() != d {
        return Err(Error::Invalid("policy and Y0 differ in dimension".into()));
    }
    let fallback = vec![1.0 / d as f64; d];
    let mut level: BTreeMap<Vec<u64>, f64> = BTreeMap::from([(y0.to_vec(), 1.0)]);
    for step in 1..=n {
        let rows: Vec<Vec<(Vec<f64>, f64)>> = (0..d)
            .map(|k| {
                policy.row_distribution(k, step).ok_or_else(|| {
                    Error::Precondition("exact enumeration needs a finite-support policy".into())
                })
            })
            .collect::<Result<_>>()?;
        let mut next: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
        for (y, prob) in &level {
            let yf: Vec<f64> = y.iter().map(|x| *x as f64).collect();
            let p = selection_probabilities(&yf, &fallback);
            for (k, pk) in p.iter().enumerate().filter(|(_, p)| **p > 0.0) {
                for (row, pr) in &rows[k] {
                    let mut z = y.clone();
                    apply_row(&mut z, row)?;
                    *next.entry(z).or_insert(0.0) += prob * pk * pr;
                    if next.len() > STATE_LIMIT {
                        return Err(Error::StateSpaceTooLarge { limit: STATE_LIMIT });
                    }
                }
            }
        }
        level = next;
    }
    Ok(level.into_iter().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LawComparison {
    pub n: u64,
    pub reps: u64,
    pub states: usize,
    #[serde(flatten)]
    pub chi_square: ChiSquareResult,
}

/// Pearson test of `Z(τ_n)` over `reps` branching runs against the exact urn
/// law of `Y_n`, with `Y_0 = Z_0` and unit rates.
pub fn embedding_distribution_test(
    policy: &ReplacementSpec,
    start: &BranchingState,
    n: u64,
    reps: u64,
    master_seed: u64,
) -> Result<LawComparison> {
    if start.alpha.iter().any(|a| *a != 1.0) {
        return Err(Error::Precondition("embedding test needs unit rates".into()));
    }
    if start.splits != 0 {
        return Err(Error::Precondition("embedding test needs a fresh branching state".into()));
    }
    let law = exact_urn_law(policy, &start.z, n)?;
    let index: HashMap<&Vec<u64>, usize> = law.iter().enumerate().map(|(i, (s, _))| (s, i)).collect();
    let mut observed = vec![0u64; law.len()];
    let mut outside = 0u64;
    let mut scratch = Matrix::zeros(start.dim());
    for r in 0..reps {
        let mut rng: UrnRng = replication_rng(master_seed, r);
        let mut state = start.clone();
        for _ in 0..n {
            one_split(&mut state, policy, &mut rng, &mut scratch)?;
        }
        match index.get(&state.z) {
            Some(&i) => observed[i] += 1,
            None => outside += 1,
        }
    }
    let probs: Vec<f64> = law.iter().map(|(_, p)| *p).collect();
    Ok(LawComparison {
        n,
        reps,
        states: law.len(),
        chi_square: pearson_chi_square(&observed, &probs, outside),
    })
}

/// Waiting times rescaled by the rate in force; Exp(1) under the model.
pub fn scaled_waiting_times(records: &[SplitRecord]) -> Vec<f64> {
    let mut prev = 0.0;
    records
        .iter()
        .map(|r| {
            let w = (r.t - prev) * r.rate;
            prev = r.t;
            w
        })
        .collect()
}

pub fn write_splits_csv<W: Write>(mut w: W, dim: usize, records: &[SplitRecord]) -> io::Result<()> {
    let mut header = vec!["split_index".to_string(), "t".to_string()];
    header.extend((1..=dim).map(|k| format!("Z_{k}")));
    writeln!(w, "{}", header.join(","))?;
    for r in records {
        let mut row = vec![r.split_index.to_string(), format!("{:.16e}", r.t)];
        row.extend(r.z.iter().map(|z| z.to_string()));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use crate::stats::{ks_p_value, ks_statistic};

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn yule_growth() {
        let p = ReplacementSpec::deterministic(Matrix::identity(1)).unwrap();
        let mut s = BranchingState::unit(vec![1]);
        let recs = simulate_splits(&mut s, &p, 50, &mut rng_from_seed(1)).unwrap();
        for r in &recs {
            assert_eq!(r.z[0], r.split_index + 1);
        }
        assert!(recs.windows(2).all(|w| w[0].t <= w[1].t));
    }

    #[test]
    fn extinction_is_reported() {
        let p = ReplacementSpec::from_config(&crate::policies::PolicyConfig::Deterministic {
            h: m(&[&[-1.0]]),
            nonneg_offdiag: true,
        })
        .unwrap();
        let mut s = BranchingState::unit(vec![2]);
        assert_eq!(simulate_splits(&mut s, &p, 5, &mut rng_from_seed(1)), Err(Error::Extinction(2)));
    }

    #[test]
    fn jump_chain_matches_urn_selection() {
        let mut rng = rng_from_seed(5);
        for _ in 0..1000 {
            let d = rng.random_range(1..6);
            let mut z: Vec<u64> = (0..d).map(|_| rng.random_range(0..50)).collect();
            z[0] += 1;
            let zf: Vec<f64> = z.iter().map(|x| *x as f64).collect();
            assert_eq!(jump_probabilities(&z, &vec![1.0; d]), selection_probabilities(&zf, &vec![1.0 / d as f64; d]));
        }
    }

    #[test]
    fn exact_law_examples() {
        let polya = ReplacementSpec::deterministic(Matrix::identity(2)).unwrap();
        let law = exact_urn_law(&polya, &[1, 1], 1).unwrap();
        assert_eq!(law, vec![(vec![1, 2], 0.5), (vec![2, 1], 0.5)]);
        let friedman = ReplacementSpec::deterministic(m(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        let law = exact_urn_law(&friedman, &[1, 1], 2).unwrap();
        // from (1,2) or (2,1), drawing the majority color gives (2,2)
        assert_eq!(law.len(), 3);
        let p22 = law.iter().find(|(s, _)| s == &vec![2, 2]).unwrap().1;
        assert!((p22 - 2.0 / 3.0).abs() < 1e-15);
        assert!((law.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-15);
        let big = ReplacementSpec::markov_add(m(&[&[0.2, 0.2, 0.6], &[0.3, 0.3, 0.4], &[0.1, 0.1, 0.8]])).unwrap();
        assert!(exact_urn_law(&big, &[1, 1, 1], 6).is_ok());
    }

    #[test]
    fn embedding_examples() {
        let polya = ReplacementSpec::deterministic(Matrix::identity(2)).unwrap();
        let r = embedding_distribution_test(&polya, &BranchingState::unit(vec![1, 1]), 1, 10_000, 7).unwrap();
        assert!(r.chi_square.p_value > 0.01);
        let friedman = ReplacementSpec::deterministic(m(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        let r = embedding_distribution_test(&friedman, &BranchingState::unit(vec![1, 1]), 2, 10_000, 8).unwrap();
        assert!(r.chi_square.p_value > 0.01);
        let one = ReplacementSpec::deterministic(Matrix::identity(1)).unwrap();
        let r = embedding_distribution_test(&one, &BranchingState::unit(vec![3]), 4, 100, 9).unwrap();
        assert_eq!(r.chi_square.statistic, 0.0);
    }

    #[test]
    fn waiting_times_are_exponential() {
        let p = ReplacementSpec::deterministic(m(&[&[5.0, 1.0], &[1.0, 5.0]])).unwrap();
        let mut s = BranchingState::new(vec![1, 1], vec![1.0, 2.0]).unwrap();
        let recs = simulate_splits(&mut s, &p, 10_000, &mut rng_from_seed(10)).unwrap();
        let w = scaled_waiting_times(&recs);
        let d = ks_statistic(&w, |x| 1.0 - (-x.max(0.0)).exp());
        assert!(ks_p_value(d, w.len()) > 0.01);
    }

    #[test]
    fn long_run_examples() {
        let one = ReplacementSpec::deterministic(Matrix::identity(1)).unwrap();
        let r = long_run_composition(&mut BranchingState::unit(vec![1]), &one, 100, &mut rng_from_seed(1)).unwrap();
        assert_eq!((r.composition[0], r.death_fractions[0]), (1.0, 1.0));

        let sym = ReplacementSpec::deterministic(m(&[&[5.0, 1.0], &[1.0, 5.0]])).unwrap();
        let r = long_run_composition(&mut BranchingState::unit(vec![1, 1]), &sym, 100_000, &mut rng_from_seed(2))
            .unwrap();
        assert!((r.composition[0] - 0.5).abs() < 0.05);

        let polya = ReplacementSpec::deterministic(Matrix::identity(2)).unwrap();
        let mut s = BranchingState::new(vec![1, 1], vec![2.0, 1.0]).unwrap();
        let r = long_run_composition(&mut s, &polya, 100_000, &mut rng_from_seed(3)).unwrap();
        assert!(r.composition[0] > 0.95, "{:?}", r.composition);
    }

    #[test]
    fn rescaled_urn_tracks_branching_composition() {
        use crate::urn::{run_trajectory, UrnState};
        let polya = ReplacementSpec::deterministic(Matrix::identity(2)).unwrap();
        let urn = rescaled_urn_policy(polya, &[2.0, 1.0]).unwrap();
        assert_eq!(urn.mean_matrix(1).unwrap(), Matrix::diagonal(&[2.0, 1.0]));
        let mut s = UrnState::new(vec![2.0, 1.0], 4).unwrap();
        let snaps = run_trajectory(&mut s, &urn, 100_000, &[100_000], false).unwrap();
        let y = &snaps[0].y;
        let z1 = y[0] / 2.0;
        assert!(z1 / (z1 + y[1]) > 0.95);
    }

    #[test]
    fn split_csv_header() {
        let p = ReplacementSpec::deterministic(Matrix::identity(2)).unwrap();
        let recs = simulate_splits(&mut BranchingState::unit(vec![1, 1]), &p, 2, &mut rng_from_seed(1)).unwrap();
        let mut buf = Vec::new();
        write_splits_csv(&mut buf, 2, &recs).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("split_index,t,Z_1,Z_2\n"));
    }
}
