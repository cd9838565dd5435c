//! Secondary spectrum: the ratio `rho` and the block size `nu_sec`.

use nalgebra::linalg::{Schur, SVD};
use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::perron::lambda_tolerance;

/// Absolute tolerance for grouping eigenvalues.
const CLUSTER_TOL: f64 = 1e-8;
/// Singular values below `RANK_TOL * max(1, |H|)^k` count as zero in `(H - mu I)^k`.
const RANK_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecondSpectrum {
    /// `None` when the whole spectrum sits in the dominant cluster.
    pub rho: Option<f64>,
    pub nu_sec: usize,
}

/// Iteration cap per attempt; the unbounded defaults can cycle forever on
/// matrices with repeated eigenvalues.
const MAX_SWEEPS: usize = 10_000;
/// Convergence tolerances tried in turn.
const EPS_LADDER: [f64; 5] = [f64::EPSILON, 1e-15, 1e-14, 1e-12, 1e-10];

/// Full spectrum by a dense nonsymmetric eigensolve.
pub fn eigenvalues(h: &Matrix) -> Result<Vec<Complex<f64>>> {
    let m = h.to_dmatrix();
    EPS_LADDER
        .iter()
        .find_map(|&eps| Schur::try_new(m.clone(), eps, MAX_SWEEPS))
        .map(|schur| schur.complex_eigenvalues().iter().copied().collect())
        .ok_or(Error::NoConvergence(MAX_SWEEPS))
}

pub fn second_eigen_structure(h: &Matrix, lambda_h: f64) -> Result<SecondSpectrum> {
    let eig = eigenvalues(h)?;
    let cut = lambda_h - lambda_tolerance(lambda_h);
    let secondary: Vec<Complex<f64>> = eig.into_iter().filter(|z| z.re <= cut).collect();
    if secondary.is_empty() {
        return Ok(SecondSpectrum { rho: None, nu_sec: 1 });
    }
    let top = secondary.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let group: Vec<Complex<f64>> =
        secondary.into_iter().filter(|z| z.re >= top - CLUSTER_TOL * top.abs().max(1.0)).collect();

    let mut nu_sec = 1;
    for mu in distinct_clusters(&group) {
        nu_sec = nu_sec.max(block_size(h, mu)?);
    }
    Ok(SecondSpectrum { rho: Some(top / lambda_h), nu_sec })
}

/// Single-linkage clustering at `CLUSTER_TOL`; returns each cluster's mean.
fn distinct_clusters(values: &[Complex<f64>]) -> Vec<Complex<f64>> {
    let n = values.len();
    let mut label: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if (values[i] - values[j]).norm() <= CLUSTER_TOL * values[i].norm().max(1.0) {
                let (a, b) = (label[i], label[j]);
                if a != b {
                    for l in label.iter_mut() {
                        if *l == b {
                            *l = a;
                        }
                    }
                }
            }
        }
    }
    let mut labels = label.clone();
    labels.sort_unstable();
    labels.dedup();
    labels
        .into_iter()
        .map(|l| {
            let members: Vec<_> = (0..n).filter(|&i| label[i] == l).map(|i| values[i]).collect();
            members.iter().sum::<Complex<f64>>() / members.len() as f64
        })
        .collect()
}

/// Smallest k with rank((H - mu I)^k) == rank((H - mu I)^(k+1)).
fn block_size(h: &Matrix, mu: Complex<f64>) -> Result<usize> {
    let d = h.dim();
    let a: DMatrix<Complex<f64>> = DMatrix::from_fn(d, d, |i, j| {
        let shift = if i == j { mu } else { Complex::new(0.0, 0.0) };
        Complex::new(h[(i, j)], 0.0) - shift
    });
    let base = h.norm().max(1.0);
    let mut power = a.clone();
    let mut prev_rank = rank(&power, RANK_TOL * base)?;
    for k in 1..=d {
        power = &power * &a;
        let r = rank(&power, RANK_TOL * base.powi(k as i32 + 1))?;
        if r == prev_rank {
            return Ok(k);
        }
        prev_rank = r;
    }
    Ok(d)
}

fn rank(m: &DMatrix<Complex<f64>>, tol: f64) -> Result<usize> {
    EPS_LADDER
        .iter()
        .find_map(|&eps| SVD::try_new(m.clone(), false, false, eps, MAX_SWEEPS))
        .map(|svd| svd.singular_values.iter().filter(|&&s| s > tol).count())
        .ok_or(Error::NoConvergence(MAX_SWEEPS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn symmetric_pair() {
        let s = second_eigen_structure(&m(&[vec![5.0, 1.0], vec![1.0, 5.0]]), 6.0).unwrap();
        assert_abs_diff_eq!(s.rho.unwrap(), 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(s.nu_sec, 1);
    }

    #[test]
    fn identity_has_no_secondary_spectrum() {
        let s = second_eigen_structure(&Matrix::identity(2), 1.0).unwrap();
        assert_eq!(s, SecondSpectrum { rho: None, nu_sec: 1 });
    }

    #[test]
    fn block_diagonal() {
        let h = m(&[vec![3.0, 0.0, 0.0], vec![0.0, 2.0, 1.0], vec![0.0, 1.0, 2.0]]);
        let s = second_eigen_structure(&h, 3.0).unwrap();
        assert_abs_diff_eq!(s.rho.unwrap(), 1.0 / 3.0, epsilon = 1e-12);
        assert_eq!(s.nu_sec, 1);
    }

    #[test]
    fn jordan_block_detected() {
        // eigenvalue 2 with a 2x2 Jordan block below the dominant root 5
        let h = m(&[vec![5.0, 0.0, 0.0], vec![1.0, 2.0, 1.0], vec![1.0, 0.0, 2.0]]);
        let s = second_eigen_structure(&h, 5.0).unwrap();
        assert_abs_diff_eq!(s.rho.unwrap(), 0.4, epsilon = 1e-7);
        assert_eq!(s.nu_sec, 2);
    }

    #[test]
    fn repeated_but_diagonalizable() {
        let h = Matrix::diagonal(&[4.0, 1.0, 1.0]);
        let s = second_eigen_structure(&h, 4.0).unwrap();
        assert_eq!(s.nu_sec, 1);
        assert_abs_diff_eq!(s.rho.unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn complex_pair_uses_real_part() {
        // 3-cycle: eigenvalues 1 and -1/2 +- i sqrt(3)/2
        let h = m(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]);
        let s = second_eigen_structure(&h, 1.0).unwrap();
        assert_abs_diff_eq!(s.rho.unwrap(), -0.5, epsilon = 1e-10);
        assert_eq!(s.nu_sec, 1);
    }
}
