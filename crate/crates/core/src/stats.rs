//! Goodness-of-fit statistics used by the verification routines.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Kolmogorov–Smirnov statistic of `samples` against a continuous `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_unstable_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov survival function with Stephens' small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = 2.0 * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Pearson chi-square of observed counts against expected probabilities.
/// Counts falling outside the support make the statistic infinite.
pub fn pearson_chi_square(observed: &[u64], probs: &[f64], outside_support: u64) -> ChiSquareResult {
    let total = observed.iter().sum::<u64>() + outside_support;
    let support = probs.iter().filter(|p| **p > 0.0).count();
    let df = support.saturating_sub(1);
    if outside_support > 0 {
        return ChiSquareResult { statistic: f64::INFINITY, df, p_value: 0.0 };
    }
    let statistic: f64 = observed
        .iter()
        .zip(probs)
        .filter(|(_, p)| **p > 0.0)
        .map(|(&o, &p)| {
            let e = p * total as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let p_value = if df == 0 {
        1.0
    } else {
        ChiSquared::new(df as f64).map(|c| c.sf(statistic)).unwrap_or(f64::NAN)
    };
    ChiSquareResult { statistic, df, p_value }
}
