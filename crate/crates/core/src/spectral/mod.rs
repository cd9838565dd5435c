//! Spectral classification of a mean replacement matrix.
//!
//! A [`SpectralProfile`] collects everything the limit theorems need: the
//! dominant root `lambda_h`, the class decomposition, the bases `{v_j}` and
//! `{u_j}` of the dominant left/right eigenspaces, the projection
//! `U = sum_j u_j^t v_j`, and the secondary spectrum `(rho, nu_sec)`.

mod eigen;
mod graph;
mod limit;
mod ode;
mod perron;

pub use eigen::{eigenvalues, second_eigen_structure, SecondSpectrum};
pub use graph::{is_irreducible, strongly_connected_classes, StructureMatrix};
pub use limit::{dist_to_hull, dist_to_limit_set, hull_weights, project_to_simplex, rate_bn};
pub use ode::{integrate_mean_ode, regression, OdeTrajectory};
pub use perron::{class_perron, perron_data, ClassPerron, MeanMatrix, PerronData};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Largest supported number of colors.
pub const MAX_DIM: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub members: Vec<usize>,
    pub perron_root: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    pub lambda_h: f64,
    pub classes: Vec<ClassInfo>,
    pub nu1: usize,
    pub v_basis: Vec<Vec<f64>>,
    pub u_basis: Vec<Vec<f64>>,
    pub u_projection: Matrix,
    pub rho: Option<f64>,
    pub nu_sec: usize,
    pub irreducible: bool,
}

impl SpectralProfile {
    /// Profile of `h` with classes taken from its own nonzero pattern.
    pub fn analyze(h: &MeanMatrix) -> Result<Self> {
        Self::analyze_with(h, None, None)
    }

    /// Profile of `h` using `structure` (the policy's nonzero pattern) for the
    /// class decomposition, optionally overriding the estimated `nu_sec`.
    pub fn analyze_with(
        h: &MeanMatrix,
        structure: Option<&StructureMatrix>,
        nu_sec_override: Option<usize>,
    ) -> Result<Self> {
        let own = StructureMatrix::from_matrix(h.matrix());
        let structure = match structure {
            Some(s) if s.dim() != h.dim() => {
                return Err(Error::Invalid("structure and mean matrix differ in dimension".into()))
            }
            Some(s) => s.union(&own),
            None => own,
        };
        let classes = strongly_connected_classes(&structure);
        let perron = perron_data(h, &classes)?;
        let second = second_eigen_structure(h.matrix(), perron.lambda_h)?;
        let nu_sec = match nu_sec_override {
            Some(0) => return Err(Error::Invalid("nu_sec override must be positive".into())),
            Some(n) => n,
            None => second.nu_sec,
        };
        Ok(Self {
            lambda_h: perron.lambda_h,
            irreducible: classes.len() == 1,
            classes: classes
                .into_iter()
                .zip(perron.class_roots)
                .map(|(members, perron_root)| ClassInfo { members, perron_root })
                .collect(),
            nu1: perron.v_basis.len(),
            v_basis: perron.v_basis,
            u_basis: perron.u_basis,
            u_projection: perron.u_projection,
            rho: second.rho,
            nu_sec,
        })
    }

    pub fn dim(&self) -> usize {
        self.u_projection.dim()
    }

    /// `b_n` for this profile.
    pub fn rate(&self, n: u64) -> Result<f64> {
        rate_bn(self.rho, self.nu_sec, n)
    }
}
