//! Perron data of the mean matrix: dominant root, class eigenvectors, and
//! the projection onto the dominant left eigenspace.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 1_000_000;

/// Mean replacement matrix with nonnegative off-diagonal entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct MeanMatrix(Matrix);

impl MeanMatrix {
    pub fn new(h: Matrix) -> Result<Self> {
        if h.dim() > super::MAX_DIM {
            return Err(Error::Invalid(format!("dimension {} exceeds {}", h.dim(), super::MAX_DIM)));
        }
        for i in 0..h.dim() {
            for j in 0..h.dim() {
                if i != j && h[(i, j)] < 0.0 {
                    return Err(Error::Invalid(format!(
                        "H[{i}][{j}] = {}: off-diagonal mean entries must be nonnegative",
                        h[(i, j)]
                    )));
                }
            }
        }
        Ok(Self(h))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }
}

impl TryFrom<Matrix> for MeanMatrix {
    type Error = Error;
    fn try_from(m: Matrix) -> Result<Self> {
        Self::new(m)
    }
}

impl From<MeanMatrix> for Matrix {
    fn from(m: MeanMatrix) -> Self {
        m.0
    }
}

/// Perron root and eigenvectors of one irreducible class, in class-local
/// coordinates (indexed like `members`).
#[derive(Clone, Debug)]
pub struct ClassPerron {
    pub members: Vec<usize>,
    pub root: f64,
    /// Nonnegative left eigenvector summing to 1.
    pub left: Vec<f64>,
    /// Nonnegative right eigenvector summing to 1.
    pub right: Vec<f64>,
}

/// Shifted power iteration on `beta I + H_class` with
/// `beta = 1 + max |H_kk|`, inverse-iteration polish, and a two-sided
/// Rayleigh quotient.
pub fn class_perron(h: &Matrix, members: &[usize]) -> Result<ClassPerron> {
    let m = members.len();
    if m == 1 {
        let k = members[0];
        return Ok(ClassPerron {
            members: members.to_vec(),
            root: h[(k, k)],
            left: vec![1.0],
            right: vec![1.0],
        });
    }
    let beta = 1.0 + members.iter().map(|&k| h[(k, k)].abs()).fold(0.0, f64::max);
    let mut b = vec![0.0; m * m];
    for (i, &p) in members.iter().enumerate() {
        for (j, &q) in members.iter().enumerate() {
            b[i * m + j] = h[(p, q)] + if i == j { beta } else { 0.0 };
        }
    }

    let mut right = vec![1.0 / m as f64; m];
    let mut left = right.clone();
    let mut next = vec![0.0; m];
    let (mut mu_r, mut mu_l) = (f64::NAN, f64::NAN);
    let mut converged = false;
    for _ in 0..POWER_MAX_ITER {
        // right: B x
        for i in 0..m {
            next[i] = dot(&b[i * m..(i + 1) * m], &right);
        }
        let new_r: f64 = next.iter().sum();
        for (x, y) in right.iter_mut().zip(&next) {
            *x = y / new_r;
        }
        // left: x B
        next.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..m {
            let li = left[i];
            for j in 0..m {
                next[j] += li * b[i * m + j];
            }
        }
        let new_l: f64 = next.iter().sum();
        for (x, y) in left.iter_mut().zip(&next) {
            *x = y / new_l;
        }
        let tol = POWER_TOL * new_r.abs().max(1.0);
        let done = (new_r - mu_r).abs() < tol && (new_l - mu_l).abs() < tol;
        mu_r = new_r;
        mu_l = new_l;
        if done {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(POWER_MAX_ITER));
    }

    // a small spectral gap leaves the vectors behind the root; two steps of
    // inverse iteration just above the estimated root clean them up
    let bm = DMatrix::from_row_slice(m, m, &b);
    let mu = rayleigh(&b, &left, &right) * (1.0 + 1e-10);
    let shifted = (&bm - DMatrix::identity(m, m) * mu).lu();
    let shifted_t = (bm.transpose() - DMatrix::identity(m, m) * mu).lu();
    for _ in 0..2 {
        polish(&shifted, &mut right);
        polish(&shifted_t, &mut left);
    }
    let root = rayleigh(&b, &left, &right) - beta;
    Ok(ClassPerron { members: members.to_vec(), root, left, right })
}

fn rayleigh(b: &[f64], left: &[f64], right: &[f64]) -> f64 {
    let m = right.len();
    let bx: Vec<f64> = (0..m).map(|i| dot(&b[i * m..(i + 1) * m], right)).collect();
    dot(left, &bx) / dot(left, right)
}

/// One inverse-iteration step; keeps `x` if the solve breaks down.
fn polish(lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, x: &mut [f64]) {
    let Some(y) = lu.solve(&DVector::from_column_slice(x)) else { return };
    let s: f64 = y.iter().sum();
    if !(s.is_finite() && s != 0.0) || y.iter().any(|v| !v.is_finite()) {
        return;
    }
    for (xi, yi) in x.iter_mut().zip(y.iter()) {
        *xi = (yi / s).max(0.0);
    }
}

/// Dominant-eigenvalue data shared by every profile.
#[derive(Clone, Debug)]
pub struct PerronData {
    pub lambda_h: f64,
    pub class_roots: Vec<f64>,
    /// Indices into the class list of the classes attaining `lambda_h`.
    pub dominant: Vec<usize>,
    pub v_basis: Vec<Vec<f64>>,
    pub u_basis: Vec<Vec<f64>>,
    pub u_projection: Matrix,
}

pub(crate) fn lambda_tolerance(lambda: f64) -> f64 {
    1e-8 * lambda.abs().max(1.0)
}

/// Computes the dominant root over classes and the bases `{v_j}`, `{u_j}`.
///
/// Each `u_j` is the class right eigenvector extended to the transient colors
/// by solving `(lambda I - H_TT) u_T = H_{T,C_j} u_{C_j}`; the result must be
/// a genuine eigenvector and `sum_j u_j` must be strictly positive.
pub fn perron_data(h: &MeanMatrix, classes: &[Vec<usize>]) -> Result<PerronData> {
    let hm = h.matrix();
    let d = hm.dim();
    let per_class = classes
        .iter()
        .map(|c| class_perron(hm, c))
        .collect::<Result<Vec<_>>>()?;
    let lambda_h = per_class.iter().map(|c| c.root).fold(f64::NEG_INFINITY, f64::max);
    if lambda_h <= 0.0 {
        return Err(Error::NonPositiveLambda(lambda_h));
    }
    let tol = lambda_tolerance(lambda_h);
    let dominant: Vec<usize> =
        (0..classes.len()).filter(|&c| per_class[c].root > lambda_h - tol).collect();

    let transient: Vec<usize> = {
        let mut t: Vec<usize> = (0..classes.len())
            .filter(|c| !dominant.contains(c))
            .flat_map(|c| classes[c].iter().copied())
            .collect();
        t.sort_unstable();
        t
    };
    let lu = if transient.is_empty() {
        None
    } else {
        let nt = transient.len();
        let a = DMatrix::from_fn(nt, nt, |i, j| {
            let diag = if i == j { lambda_h } else { 0.0 };
            diag - hm[(transient[i], transient[j])]
        });
        Some(a.lu())
    };

    let scale = hm.norm().max(1.0);
    let mut v_basis = Vec::with_capacity(dominant.len());
    let mut u_basis = Vec::with_capacity(dominant.len());
    for &c in &dominant {
        let cp = &per_class[c];
        let mut v = vec![0.0; d];
        let mut u = vec![0.0; d];
        let norm = dot(&cp.left, &cp.right);
        for (i, &k) in cp.members.iter().enumerate() {
            v[k] = cp.left[i];
            u[k] = cp.right[i] / norm;
        }
        if let Some(lu) = &lu {
            let rhs = DVector::from_fn(transient.len(), |i, _| {
                cp.members.iter().map(|&q| hm[(transient[i], q)] * u[q]).sum::<f64>()
            });
            let sol = lu.solve(&rhs).ok_or_else(|| {
                Error::NoPositiveRightEigenvector("transient block is singular".into())
            })?;
            for (i, &k) in transient.iter().enumerate() {
                u[k] = sol[i];
            }
        }
        let hu = hm.right_mul(&u);
        let u_max = u.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        let residual = hu.iter().zip(&u).map(|(a, b)| (a - lambda_h * b).abs()).fold(0.0, f64::max);
        if residual > 1e-8 * scale * u_max.max(1.0) {
            return Err(Error::NoPositiveRightEigenvector(format!(
                "dominant class {:?} feeds other colors",
                cp.members
            )));
        }
        v_basis.push(v);
        u_basis.push(u);
    }

    let total: Vec<f64> = (0..d).map(|k| u_basis.iter().map(|u| u[k]).sum()).collect();
    let total_max = total.iter().copied().fold(0.0, f64::max);
    if let Some(k) = total.iter().position(|&x| x <= 1e-10 * total_max) {
        return Err(Error::NoPositiveRightEigenvector(format!(
            "color {k} does not reach a dominant class"
        )));
    }

    let mut u_projection = Matrix::zeros(d);
    for (u, v) in u_basis.iter().zip(&v_basis) {
        for a in 0..d {
            for b in 0..d {
                u_projection[(a, b)] += u[a] * v[b];
            }
        }
    }

    Ok(PerronData {
        lambda_h,
        class_roots: per_class.iter().map(|c| c.root).collect(),
        dominant,
        v_basis,
        u_basis,
        u_projection,
    })
}
