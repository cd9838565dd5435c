//! Heavy-tailed diagonal law `P(D = j) = c / (j^2 ln^beta j)`, `j >= 2`.
//!
//! `P(D > x)` decays like `1 / (x ln^beta x)`, so the mean is finite iff
//! `beta > 1`, `E[D ln D]` is finite iff `beta > 2`, and the second moment
//! is infinite for every `beta`.

use rand::Rng;

/// Largest value tabulated exactly; beyond it the tail is sampled by inverting
/// its leading-order survival function.
pub const DEFAULT_CUTOFF: u64 = 1 << 20;

#[derive(Clone, Debug)]
pub struct LogZetaTable {
    beta: f64,
    cutoff: u64,
    /// `cdf[i] = P(D <= i + 2)`.
    cdf: Vec<f64>,
    normalizer: f64,
    tail_mass: f64,
    mean: Option<f64>,
    tail_error_bound: f64,
}

fn weight(j: f64, beta: f64) -> f64 {
    1.0 / (j * j * j.ln().powf(beta))
}

/// `int_0^inf e^{-s} (l + s)^{-beta} ds` by composite Simpson on `[0, 60]`.
fn laplace_tail(l: f64, beta: f64) -> f64 {
    const N: usize = 6000;
    let upper = 60.0;
    let h = upper / N as f64;
    let f = |s: f64| (-s).exp() * (l + s).powf(-beta);
    let mut acc = f(0.0) + f(upper);
    for i in 1..N {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    acc * h / 3.0
}

impl LogZetaTable {
    pub fn new(beta: f64) -> Self {
        Self::with_cutoff(beta, DEFAULT_CUTOFF)
    }

    pub fn with_cutoff(beta: f64, cutoff: u64) -> Self {
        assert!(beta > 0.0 && beta.is_finite(), "beta must be positive");
        assert!(cutoff >= 16);
        let weights: Vec<f64> = (2..=cutoff).map(|j| weight(j as f64, beta)).collect();
        // small terms first
        let head: f64 = weights.iter().rev().sum();
        let jc = cutoff as f64;
        let lj = jc.ln();
        // sum_{j>J} f(j) = int_J^inf f - f(J)/2 + O(|f'(J)|)
        let tail = (-lj).exp() * laplace_tail(lj, beta) - 0.5 * weight(jc, beta);
        let tail_error_bound = 2.0 / (jc * jc * jc * lj.powf(beta)) / 12.0 + 1e-14 * tail;
        let total = head + tail;
        let normalizer = 1.0 / total;

        let mut cdf = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w * normalizer;
            cdf.push(acc);
        }
        let tail_mass = tail * normalizer;

        let mean = (beta > 1.0).then(|| {
            let head_mean: f64 =
                (2..=cutoff).rev().map(|j| j as f64 * weight(j as f64, beta)).sum();
            let g = |x: f64| 1.0 / (x * x.ln().powf(beta));
            let tail_mean = lj.powf(1.0 - beta) / (beta - 1.0) - 0.5 * g(jc);
            (head_mean + tail_mean) * normalizer
        });

        Self { beta, cutoff, cdf, normalizer, tail_mass, mean, tail_error_bound }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn cutoff(&self) -> u64 {
        self.cutoff
    }

    /// The constant `c_beta`.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// Bound on the error of the tail correction added to the partial sum.
    pub fn tail_error_bound(&self) -> f64 {
        self.tail_error_bound
    }

    pub fn mean(&self) -> Option<f64> {
        self.mean
    }

    /// `P(D = j)` (zero outside `j >= 2`).
    pub fn pmf(&self, j: u64) -> f64 {
        if j < 2 {
            0.0
        } else {
            self.normalizer * weight(j as f64, self.beta)
        }
    }

    /// `P(D <= j)` for `j` within the table.
    pub fn cdf(&self, j: u64) -> f64 {
        if j < 2 {
            0.0
        } else if j >= self.cutoff {
            1.0 - self.tail_mass
        } else {
            self.cdf[(j - 2) as usize]
        }
    }

    /// Which of `E[D]`, `E[D ln D]`, `E[D^2]` are finite.
    pub fn finite_moments(&self) -> [bool; 3] {
        [self.beta > 1.0, self.beta > 2.0, false]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile(u)
    }

    /// Inverse CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        let last = *self.cdf.last().expect("table is never empty");
        if u < last {
            return (self.cdf.partition_point(|&c| c <= u) + 2) as f64;
        }
        // conditional tail: solve x ln^beta x = J ln^beta J / v
        let v = ((1.0 - u) / self.tail_mass).clamp(f64::MIN_POSITIVE, 1.0);
        let lj = (self.cutoff as f64).ln();
        let target = lj + self.beta * lj.ln() - v.ln();
        let mut y = target;
        for _ in 0..50 {
            let step = (y + self.beta * y.ln() - target) / (1.0 + self.beta / y);
            y -= step;
            if step.abs() < 1e-13 * y {
                break;
            }
        }
        y.exp().floor().max(self.cutoff as f64 + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent check of the normalizer: a much longer partial sum plus the
    /// crude integral bracket.
    #[test]
    fn normalizer_matches_long_partial_sum() {
        for beta in [1.0, 1.5, 3.0] {
            let t = LogZetaTable::new(beta);
            let n = 1u64 << 24;
            let head: f64 = (2..=n).rev().map(|j| weight(j as f64, beta)).sum();
            let ln = (n as f64).ln();
            // int_n^inf x^-2 ln^-beta x dx lies between these (Jensen for the lower one)
            let upper = 1.0 / (n as f64 * ln.powf(beta));
            let lower = upper * (1.0 + 1.0 / ln).powf(-beta);
            let z_lo = head + lower - weight(n as f64, beta);
            let z_hi = head + upper;
            let z = 1.0 / t.normalizer();
            assert!(z > z_lo - 1e-12 && z < z_hi + 1e-12, "beta={beta}: {z} not in [{z_lo}, {z_hi}]");
            assert!(t.tail_error_bound() < 1e-12);
        }
    }

    #[test]
    fn mean_finiteness() {
        assert!(LogZetaTable::new(1.0).mean().is_none());
        let t = LogZetaTable::new(3.0);
        let m = t.mean().unwrap();
        // crude bracket: truncated mean at 2^20 below, plus full integral tail above
        let n = 1u64 << 20;
        let head: f64 = (2..=n).map(|j| j as f64 * t.pmf(j)).sum();
        assert!(m > head);
        let ln = (n as f64).ln();
        assert!(m < head + t.normalizer() * ln.powf(-2.0) / 2.0);
    }

    #[test]
    fn quantile_is_monotone_and_reaches_tail() {
        let t = LogZetaTable::new(1.0);
        assert_eq!(t.quantile(0.0), 2.0);
        let mut prev = 0.0;
        for i in 0..1000 {
            let q = t.quantile(i as f64 / 1000.0);
            assert!(q >= prev);
            prev = q;
        }
        let far = t.quantile(1.0 - t.tail_mass() / 2.0);
        assert!(far > t.cutoff() as f64);
    }

    #[test]
    fn tail_quantile_inverts_leading_order_survival() {
        let t = LogZetaTable::new(2.0);
        let v: f64 = 0.25;
        let x = t.quantile(1.0 - v * t.tail_mass());
        let g = |x: f64| 1.0 / (x * x.ln().powi(2));
        let ratio = g(x) / g(t.cutoff() as f64);
        assert!((ratio - v).abs() < 1e-5, "{ratio}");
    }
}
