use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{hermitian_eigen, CMatrix, FockDensityMatrix};
use crate::error::{Error, Result};

fn psd_sqrt(m: &CMatrix) -> CMatrix {
    let eig = hermitian_eigen(m);
    let roots = DVector::from_iterator(
        m.nrows(),
        eig.eigenvalues.iter().map(|&l| Complex64::new(l.max(0.0).sqrt(), 0.0)),
    );
    let u = &eig.eigenvectors;
    u * CMatrix::from_diagonal(&roots) * u.adjoint()
}

/// Uhlmann fidelity `(Tr sqrt(sqrt(ρ1) ρ2 sqrt(ρ1)))²`, computed as the squared
/// nuclear norm of `sqrt(ρ1) sqrt(ρ2)`.
pub fn fidelity(rho1: &FockDensityMatrix, rho2: &FockDensityMatrix) -> Result<f64> {
    if rho1.dim() != rho2.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho1.dim(),
            got: rho2.dim(),
        });
    }
    let prod = psd_sqrt(rho1.matrix()) * psd_sqrt(rho2.matrix());
    let nuclear: f64 = prod.singular_values().iter().sum();
    Ok((nuclear * nuclear).clamp(0.0, 1.0))
}

/// Split of the mean photon number between the dominant eigenvector and the
/// rest of the spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonDecomposition {
    /// Weight of the dominant eigenvector; `None` when not derived from a
    /// density matrix.
    pub sigma: Option<f64>,
    pub n_total: f64,
    pub n_sq: f64,
    pub n_other: f64,
}

pub fn photon_decomposition(rho: &FockDensityMatrix) -> PhotonDecomposition {
    let eig = hermitian_eigen(rho.matrix());
    let top = eig.eigenvalues.imax();
    let sigma = eig.eigenvalues[top].clamp(0.0, 1.0);
    let psi = eig.eigenvectors.column(top);
    let n_psi: f64 = psi
        .iter()
        .enumerate()
        .map(|(n, z)| n as f64 * z.norm_sqr())
        .sum();
    let n_total = rho.mean_photon_number();
    let n_sq = sigma * n_psi;
    PhotonDecomposition {
        sigma: Some(sigma),
        n_total,
        n_sq,
        n_other: n_total - n_sq,
    }
}
