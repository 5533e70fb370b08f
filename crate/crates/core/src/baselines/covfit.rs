use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::SqueezedThermalParams;
use crate::homodyne::PhaseBin;

/// Bins with fewer samples are left out of the fit.
pub const MIN_BIN_COUNT: usize = 5;

/// Weighted fit of `V(θ) ≈ A + B cos 2θ + C sin 2θ` to binned variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Decoded state; `None` when `A ≤ sqrt(B² + C²)`.
    pub params: Option<SqueezedThermalParams>,
    pub residual_rms: f64,
    pub bins_used: usize,
}

impl VarianceFit {
    pub fn is_physical(&self) -> bool {
        self.params.is_some()
    }

    pub fn amplitude(&self) -> f64 {
        self.b.hypot(self.c)
    }

    /// Minimum and maximum of the fitted curve.
    pub fn extremes(&self) -> (f64, f64) {
        (self.a - self.amplitude(), self.a + self.amplitude())
    }
}

/// Controls for [`fit_variance_model_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceFitOptions {
    /// Extra weighted passes with weights `count / V_fit²`. With 0 the
    /// weights are the plain bin counts.
    pub reweight_passes: usize,
}

impl Default for VarianceFitOptions {
    fn default() -> Self {
        Self { reweight_passes: 3 }
    }
}

/// Mean of `cos 2θ` over a bin of the given width, relative to its value at
/// the centre.
fn bin_average_factor(width: f64) -> f64 {
    if width.abs() < 1e-8 {
        1.0
    } else {
        width.sin() / width
    }
}

fn regressors(bin: &PhaseBin) -> Vector3<f64> {
    let g = bin_average_factor(bin.width);
    let (s, c) = (2.0 * bin.center).sin_cos();
    Vector3::new(1.0, g * c, g * s)
}

fn weighted_solve(used: &[&PhaseBin], weights: &[f64]) -> Result<Vector3<f64>> {
    let mut normal = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    for (b, &w) in used.iter().zip(weights) {
        let row = regressors(b);
        normal += w * row * row.transpose();
        rhs += w * b.variance * row;
    }
    let sv = normal.singular_values();
    if sv.min() <= 1e-10 * sv.max() {
        return Err(Error::Fit("degenerate design: bins do not span distinct phases".into()));
    }
    normal
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Fit("singular normal equations".into()))
}

pub fn fit_variance_model(bins: &[PhaseBin]) -> Result<VarianceFit> {
    fit_variance_model_with(bins, &VarianceFitOptions::default())
}

/// Linear fit of binned variances followed by the closed-form decode
/// `D = hypot(B, C)`, `θ_s = atan2(−C, −B)`, `2n_th + 1 = sqrt(A² − D²)`,
/// `r = atanh(D / A) / 2`.
///
/// Bins pooled over a finite phase width see the curve averaged over that
/// width, which shrinks the `cos 2θ`, `sin 2θ` terms by `sin w / w`; the
/// regressors carry the same factor so the coefficients describe the
/// underlying curve.
pub fn fit_variance_model_with(bins: &[PhaseBin], opts: &VarianceFitOptions) -> Result<VarianceFit> {
    let used: Vec<&PhaseBin> = bins.iter().filter(|b| b.count >= MIN_BIN_COUNT).collect();
    if used.len() < 3 {
        return Err(Error::Fit(format!(
            "need at least 3 bins with {MIN_BIN_COUNT}+ samples, have {}",
            used.len()
        )));
    }
    let counts: Vec<f64> = used.iter().map(|b| b.count as f64).collect();
    let mut coef = weighted_solve(&used, &counts)?;
    for _ in 0..opts.reweight_passes {
        // sample-variance noise scales like V, so weight by count / V²
        let floor = 1e-3 * coef[0].abs().max(1e-12);
        let weights: Vec<f64> = used
            .iter()
            .zip(&counts)
            .map(|(b, &n)| n / regressors(b).dot(&coef).max(floor).powi(2))
            .collect();
        coef = weighted_solve(&used, &weights)?;
    }
    let (a, b, c) = (coef[0], coef[1], coef[2]);

    let (mut ss, mut wsum) = (0.0, 0.0);
    for (bin, &w) in used.iter().zip(&counts) {
        ss += w * (bin.variance - regressors(bin).dot(&coef)).powi(2);
        wsum += w;
    }

    let d = b.hypot(c);
    let params = if a > 0.0 && a > d {
        let theta_s = if d == 0.0 { 0.0 } else { (-c).atan2(-b) };
        // noise can push A² − D² slightly below vacuum; clamp n_th at 0
        let n_th = (((a * a - d * d).sqrt() - 1.0) / 2.0).max(0.0);
        let r = 0.5 * (d / a).atanh();
        Some(SqueezedThermalParams::new(r, theta_s, n_th)?)
    } else {
        None
    };
    Ok(VarianceFit {
        a,
        b,
        c,
        params,
        residual_rms: (ss / wsum).sqrt(),
        bins_used: used.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::quadrature_variance;
    use std::f64::consts::TAU;

    fn analytic_bins(p: &SqueezedThermalParams, k: usize, shift: f64) -> Vec<PhaseBin> {
        (0..k)
            .map(|i| {
                let center = (i as f64 + 0.5) * TAU / k as f64 + shift;
                PhaseBin {
                    center,
                    width: 0.0,
                    variance: quadrature_variance(p, center),
                    count: 100,
                }
            })
            .collect()
    }

    #[test]
    fn noiseless_inversion_is_exact() {
        let p = SqueezedThermalParams::new(0.6, 1.0, 0.2).unwrap();
        let fit = fit_variance_model(&analytic_bins(&p, 24, 0.0)).unwrap();
        let q = fit.params.unwrap();
        assert!((q.r() - 0.6).abs() <= 1e-9);
        assert!((q.theta_s() - 1.0).abs() <= 1e-9);
        assert!((q.n_th() - 0.2).abs() <= 1e-9);
        assert!(fit.residual_rms < 1e-12);
    }

    #[test]
    fn pooled_bins_are_exact() {
        // bin means of the curve over a finite width, computed by quadrature
        let p = SqueezedThermalParams::new(1.2, 2.5, 0.4).unwrap();
        let k = 24;
        let w = TAU / k as f64;
        let bins: Vec<PhaseBin> = (0..k)
            .map(|i| {
                let lo = i as f64 * w;
                let n = 2000;
                let mean = (0..n)
                    .map(|j| quadrature_variance(&p, lo + (j as f64 + 0.5) * w / n as f64))
                    .sum::<f64>()
                    / n as f64;
                PhaseBin {
                    center: lo + w / 2.0,
                    width: w,
                    variance: mean,
                    count: 100,
                }
            })
            .collect();
        for passes in [0, 3] {
            let q = fit_variance_model_with(&bins, &VarianceFitOptions { reweight_passes: passes })
                .unwrap()
                .params
                .unwrap();
            assert!((q.r() - 1.2).abs() < 1e-6, "{}", q.r());
            assert!((q.theta_s() - 2.5).abs() < 1e-6);
            assert!((q.n_th() - 0.4).abs() < 1e-6);
        }
    }

    #[test]
    fn vacuum_bins_are_isotropic() {
        let fit = fit_variance_model(&analytic_bins(&SqueezedThermalParams::vacuum(), 16, 0.0)).unwrap();
        assert!(fit.b.abs() < 1e-12 && fit.c.abs() < 1e-12);
        let q = fit.params.unwrap();
        assert!(q.r() < 1e-12 && q.n_th() < 1e-12);
    }

    #[test]
    fn phase_shift_moves_only_the_angle() {
        let p = SqueezedThermalParams::new(0.9, 0.5, 0.4).unwrap();
        let base = fit_variance_model(&analytic_bins(&p, 20, 0.0)).unwrap().params.unwrap();
        // shifting every bin by δ while keeping the variances fixed is the
        // same curve rotated by δ, i.e. θ_s → θ_s + 2δ
        let delta = 0.3;
        let shifted: Vec<PhaseBin> = analytic_bins(&p, 20, 0.0)
            .into_iter()
            .map(|b| PhaseBin {
                center: b.center + delta,
                ..b
            })
            .collect();
        let q = fit_variance_model(&shifted).unwrap().params.unwrap();
        assert!((q.r() - base.r()).abs() < 1e-9);
        assert!((q.n_th() - base.n_th()).abs() < 1e-9);
        assert!((q.theta_s() - (base.theta_s() + 2.0 * delta)).abs() < 1e-9);
    }

    #[test]
    fn too_few_bins() {
        let p = SqueezedThermalParams::vacuum();
        let mut bins = analytic_bins(&p, 4, 0.0);
        bins[0].count = 4;
        bins[1].count = 0;
        assert!(matches!(fit_variance_model(&bins), Err(Error::Fit(_))));
    }

    #[test]
    fn degenerate_phases() {
        let bins: Vec<PhaseBin> = [0.3, 0.3 + std::f64::consts::PI, 0.3]
            .iter()
            .map(|&c| PhaseBin {
                center: c,
                width: 0.0,
                variance: 1.0,
                count: 50,
            })
            .collect();
        assert!(matches!(fit_variance_model(&bins), Err(Error::Fit(_))));
    }

    #[test]
    fn unphysical_flag() {
        // amplitude larger than the mean would need negative variance
        let bins: Vec<PhaseBin> = (0..8)
            .map(|i| {
                let c = (i as f64 + 0.5) * TAU / 8.0;
                PhaseBin {
                    center: c,
                    width: 0.0,
                    variance: 1.0 + 2.0 * (2.0 * c).cos(),
                    count: 10,
                }
            })
            .collect();
        let fit = fit_variance_model(&bins).unwrap();
        assert!(!fit.is_physical());
    }
}
