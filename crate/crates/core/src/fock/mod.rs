//! Single-mode states in the truncated number basis.
//!
//! Quadratures follow `X_θ = a e^{-iθ} + a† e^{iθ}`, so the vacuum variance
//! is 1 and noise levels are `10·log10` of vacuum-normalized variances.

mod analysis;
mod cholesky;
mod quadrature;
mod states;

pub use analysis::{fidelity, photon_decomposition, PhotonDecomposition};
pub use cholesky::{cholesky_factor, density_from_cholesky, CholeskyFactor};
pub use quadrature::{
    hermite_functions, quadrature_moments, quadrature_pdf, quadrature_variance,
    quadrature_variance_of, variance_harmonics, VarianceHarmonics,
};
pub use states::{
    adaptive_state, default_working_dim, fock_mass, squeeze_operator, squeezed_thermal_full,
    squeezed_thermal_state, squeezed_thermal_state_with_floor, thermal_populations,
    thermal_state, DEFAULT_MASS_FLOOR,
};

use std::f64::consts::TAU;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;

/// Reduce an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Parameters `(r, θ_s, n_th)` of a squeezed thermal state `S(ξ) ρ_th S†(ξ)`
/// with `ξ = r e^{iθ_s}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezedThermalParams {
    r: f64,
    theta_s: f64,
    n_th: f64,
}

impl SqueezedThermalParams {
    pub fn new(r: f64, theta_s: f64, n_th: f64) -> Result<Self> {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::InvalidParameter(format!("squeezing ratio r = {r}")));
        }
        if !n_th.is_finite() || n_th < 0.0 {
            return Err(Error::InvalidParameter(format!("thermal photon number n_th = {n_th}")));
        }
        if !theta_s.is_finite() {
            return Err(Error::InvalidParameter(format!("squeezing angle {theta_s}")));
        }
        Ok(Self {
            r,
            theta_s: wrap_angle(theta_s),
            n_th,
        })
    }

    pub fn vacuum() -> Self {
        Self {
            r: 0.0,
            theta_s: 0.0,
            n_th: 0.0,
        }
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn theta_s(&self) -> f64 {
        self.theta_s
    }

    pub fn n_th(&self) -> f64 {
        self.n_th
    }

    pub fn xi(&self) -> Complex64 {
        Complex64::from_polar(self.r, self.theta_s)
    }

    /// Closed-form mean photon number `n_th + (2 n_th + 1) sinh² r`.
    pub fn mean_photon_number(&self) -> f64 {
        let s = self.r.sinh();
        self.n_th + (2.0 * self.n_th + 1.0) * s * s
    }
}

/// Squeezing and anti-squeezing levels in dB relative to shot noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    pub sqz_db: f64,
    pub asqz_db: f64,
}

impl NoiseLevels {
    pub fn from_variances(v_min: f64, v_max: f64) -> Self {
        Self {
            sqz_db: -10.0 * v_min.log10(),
            asqz_db: 10.0 * v_max.log10(),
        }
    }

    pub fn v_min(&self) -> f64 {
        10f64.powf(-self.sqz_db / 10.0)
    }

    pub fn v_max(&self) -> f64 {
        10f64.powf(self.asqz_db / 10.0)
    }
}

pub fn noise_levels_from_params(params: &SqueezedThermalParams) -> NoiseLevels {
    let a = 2.0 * params.n_th + 1.0;
    NoiseLevels::from_variances(a * (-2.0 * params.r).exp(), a * (2.0 * params.r).exp())
}

/// Inverts [`noise_levels_from_params`]. The squeezing angle is not encoded in
/// the levels and comes back as 0.
pub fn params_from_levels(levels: &NoiseLevels) -> Result<SqueezedThermalParams> {
    let v_min = levels.v_min();
    let v_max = levels.v_max();
    if !(v_min.is_finite() && v_max.is_finite()) || v_min <= 0.0 {
        return Err(Error::InvalidParameter(format!("levels {levels:?}")));
    }
    if v_min > v_max {
        return Err(Error::InvalidParameter(format!(
            "V_min {v_min} exceeds V_max {v_max}"
        )));
    }
    let product = v_min * v_max;
    // allow rounding noise from the dB round trip
    if product < 1.0 - 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "V_min·V_max = {product} < 1 would need a negative thermal occupation"
        )));
    }
    let r = 0.25 * (v_max / v_min).ln();
    let n_th = ((product.sqrt() - 1.0) / 2.0).max(0.0);
    SqueezedThermalParams::new(r, 0.0, n_th)
}

/// Hermitian, positive semidefinite, unit-trace matrix in the number basis
/// `|0⟩ … |m-1⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct FockDensityMatrix {
    data: CMatrix,
}

impl FockDensityMatrix {
    /// Validates every density-matrix invariant.
    pub fn new(data: CMatrix) -> Result<Self> {
        if !data.is_square() || data.nrows() == 0 {
            return Err(Error::NonPhysical(format!(
                "shape {}x{} is not a non-empty square",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonPhysical("non-finite entry".into()));
        }
        let herm = hermitian_defect(&data);
        if herm > HERMITIAN_TOL {
            return Err(Error::NonPhysical(format!("not Hermitian (defect {herm:e})")));
        }
        let tr = data.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::NonPhysical(format!("trace {tr}")));
        }
        let min_eig = hermitian_eigen(&data).eigenvalues.min();
        if min_eig < -PSD_TOL {
            return Err(Error::NonPhysical(format!("eigenvalue {min_eig:e} < 0")));
        }
        Ok(Self { data })
    }

    /// Hermitizes and rescales to unit trace without any other check.
    pub(crate) fn from_trusted(mut data: CMatrix) -> Self {
        hermitize(&mut data);
        let tr = data.trace().re;
        data /= Complex64::new(tr, 0.0);
        Self { data }
    }

    pub fn vacuum(m: usize) -> Self {
        Self::number_state(0, m)
    }

    pub fn number_state(n: usize, m: usize) -> Self {
        assert!(n < m, "number state |{n}> outside dimension {m}");
        let mut data = CMatrix::zeros(m, m);
        data[(n, n)] = Complex64::new(1.0, 0.0);
        Self { data }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.data
    }

    pub fn into_matrix(self) -> CMatrix {
        self.data
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|n| self.data[(n, n)].re).collect()
    }

    pub fn mean_photon_number(&self) -> f64 {
        self.populations()
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    pub fn purity(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigen(&self.data).eigenvalues.iter().copied().collect()
    }
}

pub(crate) fn hermitize(m: &mut CMatrix) {
    let adj = m.adjoint();
    *m += adj;
    *m *= Complex64::new(0.5, 0.0);
}

pub(crate) fn hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub(crate) fn hermitian_eigen(m: &CMatrix) -> SymmetricEigen<Complex64, nalgebra::Dyn> {
    SymmetricEigen::new(m.clone())
}
