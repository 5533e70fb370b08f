//! Loss and phase-noise degradation of squeezing, its orthogonal-distance
//! fit, and level / photon-number summaries of estimated states.

mod fit;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{
    noise_levels_from_params, photon_decomposition, variance_harmonics, FockDensityMatrix, NoiseLevels,
    PhotonDecomposition, SqueezedThermalParams,
};

pub use fit::{
    coarse_grid, fit_degradation, fit_degradation_with, objective, CurvePoint, DegradationFit, DegradationReport,
    FitMetric, FitOptions, PointReport, SigmaBand, R_PROJ_MAX,
};

/// Optical loss `L ∈ [0, 1]` and effective phase-noise angle `θ ∈ [0, π/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    pub loss: f64,
    pub theta_pn: f64,
}

impl DegradationParams {
    pub fn new(loss: f64, theta_pn: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&loss) {
            return Err(Error::InvalidParameter(format!("loss {loss} outside [0, 1]")));
        }
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&theta_pn) {
            return Err(Error::InvalidParameter(format!("phase-noise angle {theta_pn} outside [0, π/2]")));
        }
        Ok(Self { loss, theta_pn })
    }

    pub fn ideal() -> Self {
        Self {
            loss: 0.0,
            theta_pn: 0.0,
        }
    }
}

/// Measured `(V_sqz, V_asqz)` after loss and phase noise act on a pure
/// squeezed state with ratio `r_id`.
pub fn degraded_variances(r_id: f64, dp: &DegradationParams) -> (f64, f64) {
    let v_sqz_id = (-2.0 * r_id).exp();
    let v_asqz_id = (2.0 * r_id).exp();
    let (s, c) = dp.theta_pn.sin_cos();
    let (c2, s2) = (c * c, s * s);
    let keep = 1.0 - dp.loss;
    (
        keep * (v_sqz_id * c2 + v_asqz_id * s2) + dp.loss,
        keep * (v_asqz_id * c2 + v_sqz_id * s2) + dp.loss,
    )
}

pub fn degraded_levels(r_id: f64, dp: &DegradationParams) -> NoiseLevels {
    let (v_sqz, v_asqz) = degraded_variances(r_id, dp);
    NoiseLevels::from_variances(v_sqz, v_asqz)
}

/// Either output of the two estimator paths.
#[derive(Debug, Clone, Copy)]
pub enum Estimate<'a> {
    Params(&'a SqueezedThermalParams),
    Density(&'a FockDensityMatrix),
}

/// Squeezing and anti-squeezing levels of an estimate. For a density matrix
/// the variance curve is exactly `a + b cos 2θ + c sin 2θ`, so its extremes
/// are taken in closed form rather than on a phase grid.
pub fn levels_from_estimate(source: Estimate<'_>) -> NoiseLevels {
    match source {
        Estimate::Params(p) => noise_levels_from_params(p),
        Estimate::Density(rho) => {
            let h = variance_harmonics(rho);
            NoiseLevels::from_variances(h.min(), h.max())
        }
    }
}

/// Photon-number split. The parameter path attributes `sinh² r` to the
/// squeezed component and leaves `sigma` unset.
pub fn photon_report(source: Estimate<'_>) -> PhotonDecomposition {
    match source {
        Estimate::Params(p) => {
            let n_sq = p.r().sinh().powi(2);
            let n_total = p.mean_photon_number();
            PhotonDecomposition {
                sigma: None,
                n_total,
                n_sq,
                n_other: n_total - n_sq,
            }
        }
        Estimate::Density(rho) => photon_decomposition(rho),
    }
}
