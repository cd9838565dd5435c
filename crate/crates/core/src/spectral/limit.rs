//! Distance to the limit set and the almost-sure rate sequence `b_n`.

use crate::error::{Error, Result};
use crate::matrix::{dot, euclidean};

use super::SpectralProfile;

const PG_TOL: f64 = 1e-14;
const PG_MAX_ITER: usize = 100_000;

/// Euclidean distance from `x` to `{scale * sum_j beta_j v_j : beta in simplex}`.
///
/// Use `scale = lambda_h` for `Y_n / n` and `scale = 1` for proportions.
pub fn dist_to_limit_set(x: &[f64], profile: &SpectralProfile, scale: f64) -> f64 {
    let points: Vec<Vec<f64>> =
        profile.v_basis.iter().map(|v| v.iter().map(|c| c * scale).collect()).collect();
    dist_to_hull(x, &points)
}

/// Distance from `x` to the convex hull of `points` by projected gradient on
/// the barycentric weights, finished with an exact solve on the active face.
pub fn dist_to_hull(x: &[f64], points: &[Vec<f64>]) -> f64 {
    let weights = hull_weights(x, points);
    euclidean(x, &combine(points, &weights, x.len()))
}

/// Barycentric weights of the point of the hull closest to `x`.
pub fn hull_weights(x: &[f64], points: &[Vec<f64>]) -> Vec<f64> {
    let m = points.len();
    if m == 1 {
        return vec![1.0];
    }
    let gram: Vec<Vec<f64>> =
        points.iter().map(|p| points.iter().map(|q| dot(p, q)).collect()).collect();
    let c: Vec<f64> = points.iter().map(|p| dot(p, x)).collect();
    let objective = |beta: &[f64]| -> f64 {
        let mut f = 0.0;
        for i in 0..m {
            f += beta[i] * (dot(&gram[i], beta) - 2.0 * c[i]);
        }
        f
    };
    let lipschitz = 2.0 * gram.iter().map(|r| r.iter().map(|g| g.abs()).sum::<f64>()).fold(0.0, f64::max);
    if lipschitz == 0.0 {
        return vec![1.0 / m as f64; m];
    }
    let step = 1.0 / lipschitz;

    let mut beta = vec![1.0 / m as f64; m];
    let mut f = objective(&beta);
    for _ in 0..PG_MAX_ITER {
        let trial: Vec<f64> = (0..m)
            .map(|i| beta[i] - step * 2.0 * (dot(&gram[i], &beta) - c[i]))
            .collect();
        beta = project_to_simplex(&trial);
        let f_new = objective(&beta);
        let change = (f - f_new).abs();
        f = f_new;
        if change < PG_TOL {
            break;
        }
    }

    if let Some(exact) = solve_on_face(&gram, &c, &beta) {
        if objective(&exact) <= f {
            return exact;
        }
    }
    beta
}

/// Minimizes the quadratic on the affine hull of the support of `beta`; returns
/// the solution only if it stays inside the simplex.
fn solve_on_face(gram: &[Vec<f64>], c: &[f64], beta: &[f64]) -> Option<Vec<f64>> {
    let support: Vec<usize> = (0..beta.len()).filter(|&i| beta[i] > 0.0).collect();
    let s = support.len();
    let kkt = nalgebra::DMatrix::from_fn(s + 1, s + 1, |i, j| match (i < s, j < s) {
        (true, true) => gram[support[i]][support[j]],
        (true, false) | (false, true) => 1.0,
        (false, false) => 0.0,
    });
    let rhs = nalgebra::DVector::from_fn(s + 1, |i, _| if i < s { c[support[i]] } else { 1.0 });
    let sol = kkt.lu().solve(&rhs)?;
    let mut out = vec![0.0; beta.len()];
    for (i, &k) in support.iter().enumerate() {
        if !sol[i].is_finite() || sol[i] < 0.0 {
            return None;
        }
        out[k] = sol[i];
    }
    Some(out)
}

fn combine(points: &[Vec<f64>], weights: &[f64], d: usize) -> Vec<f64> {
    let mut y = vec![0.0; d];
    for (p, w) in points.iter().zip(weights) {
        for (yk, pk) in y.iter_mut().zip(p) {
            *yk += w * pk;
        }
    }
    y
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_to_simplex(y: &[f64]) -> Vec<f64> {
    let mut sorted = y.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cum += s;
        let t = (cum - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// The rate sequence `b_n`; `rho = None` means no secondary spectrum.
pub fn rate_bn(rho: Option<f64>, nu_sec: usize, n: u64) -> Result<f64> {
    if n < 16 {
        return Err(Error::Domain(format!("b_n needs n >= 16, got {n}")));
    }
    if let Some(r) = rho {
        if !(r < 1.0) {
            return Err(Error::Domain(format!("rho must be < 1, got {r}")));
        }
    }
    let nf = n as f64;
    let ln = nf.ln();
    let lnln = ln.ln();
    let log_power = ln.powi(nu_sec as i32 - 1);
    Ok(match rho {
        Some(r) if (r - 0.5).abs() <= 1e-12 => nf.powf(-0.5) * log_power * lnln.sqrt(),
        Some(r) if r > 0.5 => nf.powf(r - 1.0) * log_power,
        _ => nf.powf(-0.5) * lnln.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn bn_examples() {
        assert_abs_diff_eq!(rate_bn(Some(2.0 / 3.0), 1, 1000).unwrap(), 0.1, epsilon = 1e-12);
        let expected = 1e-2 * (1e4f64).ln().ln().sqrt();
        assert_abs_diff_eq!(rate_bn(Some(0.25), 1, 10_000).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.01490, epsilon = 5e-6);
        let half = rate_bn(Some(0.5), 2, 10_000).unwrap();
        assert_abs_diff_eq!(half, 0.1372, epsilon = 5e-5);
        assert_eq!(rate_bn(None, 1, 10_000).unwrap(), expected);
        assert!(matches!(rate_bn(None, 1, 15), Err(Error::Domain(_))));
    }

    #[test]
    fn simplex_projection() {
        assert_eq!(project_to_simplex(&[0.2, 0.8]), vec![0.2, 0.8]);
        let p = project_to_simplex(&[2.0, 0.0]);
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn hull_of_unit_vectors() {
        let pts = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let d = dist_to_hull(&[0.5, 0.7], &pts);
        assert_abs_diff_eq!(d, 0.2 / 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn unequal_norm_vertices_are_exact() {
        // vertices with different lengths; the closest point is a vertex mix
        let pts = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.25, 0.25]];
        let x = [0.2, 0.1, 0.1];
        let w = hull_weights(&x, &pts);
        let y: Vec<f64> = (0..3).map(|k| w[0] * pts[0][k] + w[1] * pts[1][k]).collect();
        // optimality: gradient orthogonal to the edge
        let edge: Vec<f64> = (0..3).map(|k| pts[1][k] - pts[0][k]).collect();
        let r: Vec<f64> = (0..3).map(|k| y[k] - x[k]).collect();
        assert_abs_diff_eq!(dot(&edge, &r), 0.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn bn_nonincreasing_where_log_factors_are_dominated(
            rho in -1.0f64..0.9, nu in 1usize..=3, n in 100u64..1_000_000
        ) {
            // n^(rho-1) (ln n)^(nu-1) only decreases once ln n >= (nu-1)/(1-rho)
            let start = ((nu as f64 - 1.0) / (1.0 - rho)).exp().max(100.0);
            prop_assume!((n as f64) >= start);
            let a = rate_bn(Some(rho), nu, n).unwrap();
            let b = rate_bn(Some(rho), nu, n + 1).unwrap();
            prop_assert!(b <= a * (1.0 + 1e-12));
        }
    }
}
