use std::f64::consts::FRAC_PI_2;

use argmin::core::{CostFunction, Executor, State, TerminationReason};
use argmin::solver::brent::BrentOpt;
use argmin::solver::neldermead::NelderMead;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{degraded_variances, DegradationParams};
use crate::error::{Error, Result};
use crate::fock::NoiseLevels;

/// Upper bound of the per-point projection onto the model curve.
pub const R_PROJ_MAX: f64 = 3.0;
const R_GRID_STEP: f64 = 0.01;
const LN10_OVER_20: f64 = std::f64::consts::LN_10 / 20.0;

/// Coordinates the orthogonal distances are measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMetric {
    /// `(SQZ, ASQZ)` in dB.
    #[default]
    Db,
    /// `(V_sqz, V_asqz)` in shot-noise units.
    Linear,
}

impl std::str::FromStr for FitMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "db" => Ok(Self::Db),
            "linear" => Ok(Self::Linear),
            other => Err(Error::InvalidParameter(format!("unknown fit metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub metric: FitMetric,
    /// Nelder–Mead iteration budget.
    pub max_iter: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            metric: FitMetric::Db,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaBand {
    pub loss: Option<f64>,
    pub theta_pn: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationFit {
    pub params: DegradationParams,
    pub metric: FitMetric,
    /// Ideal squeezing ratio whose degraded image is closest to each point.
    pub r_proj: Vec<f64>,
    /// Orthogonal distance of each point to the fitted curve.
    pub residuals: Vec<f64>,
    /// Sum of squared residuals.
    pub objective: f64,
    /// Gauss–Newton one-sigma band; `None` without spare degrees of freedom.
    pub sigma_band: Option<SigmaBand>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

fn coords(metric: FitMetric, v_sqz: f64, v_asqz: f64) -> [f64; 2] {
    match metric {
        FitMetric::Db => [-10.0 * v_sqz.log10(), 10.0 * v_asqz.log10()],
        FitMetric::Linear => [v_sqz, v_asqz],
    }
}

fn point_coords(metric: FitMetric, p: &NoiseLevels) -> [f64; 2] {
    match metric {
        FitMetric::Db => [p.sqz_db, p.asqz_db],
        FitMetric::Linear => [p.v_min(), p.v_max()],
    }
}

fn model(metric: FitMetric, r: f64, dp: &DegradationParams) -> [f64; 2] {
    let (s, a) = degraded_variances(r, dp);
    coords(metric, s, a)
}

fn dist2(metric: FitMetric, r: f64, dp: &DegradationParams, y: &[f64; 2]) -> f64 {
    let c = model(metric, r, dp);
    (c[0] - y[0]).powi(2) + (c[1] - y[1]).powi(2)
}

struct Projection<'a> {
    metric: FitMetric,
    dp: &'a DegradationParams,
    y: [f64; 2],
}

impl CostFunction for Projection<'_> {
    type Param = f64;
    type Output = f64;

    fn cost(&self, r: &f64) -> std::result::Result<f64, argmin::core::Error> {
        Ok(dist2(self.metric, *r, self.dp, &self.y))
    }
}

/// Closest point on the curve `r ↦ model(r)` for `r ∈ [0, R_PROJ_MAX]`:
/// grid scan for the basin, then Brent inside the neighbouring cells.
fn project(metric: FitMetric, dp: &DegradationParams, y: &[f64; 2]) -> (f64, f64) {
    let steps = (R_PROJ_MAX / R_GRID_STEP).round() as usize;
    let (mut best_r, mut best) = (0.0, f64::INFINITY);
    for i in 0..=steps {
        let r = i as f64 * R_GRID_STEP;
        let d = dist2(metric, r, dp, y);
        if d < best {
            best = d;
            best_r = r;
        }
    }
    let lo = (best_r - R_GRID_STEP).max(0.0);
    let hi = (best_r + R_GRID_STEP).min(R_PROJ_MAX);
    let solver = BrentOpt::new(lo, hi).set_tolerance(1e-10, 1e-13);
    let problem = Projection { metric, dp, y: *y };
    if let Ok(res) = Executor::new(problem, solver).configure(|s| s.max_iters(200)).run() {
        let state = res.state();
        if let Some(&r) = state.get_best_param() {
            let d = state.get_best_cost();
            if d < best {
                return (r, d);
            }
        }
    }
    (best_r, best)
}

fn clamp_params(loss: f64, theta: f64) -> DegradationParams {
    DegradationParams {
        loss: loss.clamp(0.0, 1.0),
        theta_pn: theta.clamp(0.0, FRAC_PI_2),
    }
}

/// Sum of squared orthogonal distances of `points` to the curve of `dp`.
pub fn objective(points: &[NoiseLevels], dp: &DegradationParams, metric: FitMetric) -> f64 {
    points
        .iter()
        .map(|p| project(metric, dp, &point_coords(metric, p)).1)
        .sum()
}

/// Start grid for the outer minimization.
pub fn coarse_grid() -> Vec<DegradationParams> {
    const THETAS: [f64; 12] = [0.0, 0.005, 0.01, 0.02, 0.03, 0.05, 0.08, 0.12, 0.2, 0.4, 0.8, FRAC_PI_2];
    let mut grid = Vec::new();
    for i in 0..20 {
        for &theta_pn in &THETAS {
            grid.push(DegradationParams {
                loss: i as f64 * 0.05,
                theta_pn,
            });
        }
    }
    grid
}

struct Outer<'a> {
    points: &'a [NoiseLevels],
    metric: FitMetric,
}

impl CostFunction for Outer<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(objective(self.points, &clamp_params(p[0], p[1]), self.metric))
    }
}

fn validate(points: &[NoiseLevels]) -> Result<()> {
    for (i, p) in points.iter().enumerate() {
        if !(p.sqz_db.is_finite() && p.asqz_db.is_finite()) {
            return Err(Error::InvalidParameter(format!("point {i} is not finite")));
        }
        if p.asqz_db <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "point {i} has anti-squeezing {} dB ≤ 0",
                p.asqz_db
            )));
        }
    }
    Ok(())
}

fn on_ideal_line(p: &NoiseLevels) -> bool {
    (p.sqz_db - p.asqz_db).abs() <= 1e-12 * (1.0 + p.asqz_db.abs())
}

pub fn fit_degradation(points: &[NoiseLevels]) -> Result<DegradationFit> {
    fit_degradation_with(points, &FitOptions::default())
}

/// Orthogonal-distance fit of `(L, θ)` to measured levels.
pub fn fit_degradation_with(points: &[NoiseLevels], opts: &FitOptions) -> Result<DegradationFit> {
    validate(points)?;
    let metric = opts.metric;
    if !points.is_empty() && points.iter().all(on_ideal_line) {
        // every point is a pure squeezed state: no loss, no phase noise
        let dp = DegradationParams::ideal();
        let r_proj: Vec<f64> = points.iter().map(|p| p.asqz_db * LN10_OVER_20).collect();
        return Ok(DegradationFit {
            params: dp,
            metric,
            residuals: vec![0.0; points.len()],
            r_proj,
            objective: 0.0,
            sigma_band: None,
            converged: true,
            warnings: vec!["all points lie on the ideal line; objective is flat in the loss/phase-noise directions".into()],
        });
    }
    if points.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 points, have {}", points.len())));
    }

    let (start, start_cost) = coarse_grid()
        .into_iter()
        .map(|dp| (dp, objective(points, &dp, metric)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("grid is not empty");

    let simplex = vec![
        vec![start.loss, start.theta_pn],
        vec![start.loss + 0.02, start.theta_pn],
        vec![start.loss, start.theta_pn + 0.01],
    ];
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-15)
        .map_err(|e| Error::Fit(e.to_string()))?;
    let res = Executor::new(Outer { points, metric }, solver)
        .configure(|s| s.max_iters(opts.max_iter))
        .run()
        .map_err(|e| Error::Fit(e.to_string()))?;
    let state = res.state();
    let converged = matches!(state.get_termination_reason(), Some(TerminationReason::SolverConverged));
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!("Nelder–Mead stopped after {} iterations without converging", opts.max_iter));
    }
    let mut params = match state.get_best_param() {
        Some(p) if state.get_best_cost() <= start_cost => clamp_params(p[0], p[1]),
        _ => start,
    };
    if objective(points, &params, metric) > start_cost {
        params = start;
    }

    let projections: Vec<(f64, f64)> = points
        .iter()
        .map(|p| project(metric, &params, &point_coords(metric, p)))
        .collect();
    let r_proj: Vec<f64> = projections.iter().map(|p| p.0).collect();
    let residuals: Vec<f64> = projections.iter().map(|p| p.1.sqrt()).collect();
    let objective = residuals.iter().map(|d| d * d).sum();
    let sigma_band = sigma_band(points, &params, &r_proj, metric);

    Ok(DegradationFit {
        params,
        metric,
        r_proj,
        residuals,
        objective,
        sigma_band,
        converged,
        warnings,
    })
}

/// One-sigma band for `(L, θ)` from `s² (JᵀJ)⁻¹` over the parameter vector
/// `(L, θ, r_1, …, r_n)`. A parameter sitting on its box edge is held fixed
/// and gets no band: at `θ = 0` the model is even in `θ` and carries no
/// first-order information.
fn sigma_band(points: &[NoiseLevels], dp: &DegradationParams, r: &[f64], metric: FitMetric) -> Option<SigmaBand> {
    let n = points.len();
    let edge = 1e-9;
    let fit_loss = dp.loss > edge && dp.loss < 1.0 - edge;
    let fit_theta = dp.theta_pn > edge && dp.theta_pn < FRAC_PI_2 - edge;
    // 0 = loss, 1 = θ, 2.. = r_i
    let cols: Vec<usize> = [(0, fit_loss), (1, fit_theta)]
        .iter()
        .filter(|c| c.1)
        .map(|c| c.0)
        .chain(2..n + 2)
        .collect();
    let k = cols.len();
    if 2 * n <= k || !(fit_loss || fit_theta) {
        return None;
    }
    let residual = |x: &[f64]| -> Vec<f64> {
        let d = DegradationParams {
            loss: x[0],
            theta_pn: x[1],
        };
        points
            .iter()
            .zip(&x[2..])
            .flat_map(|(p, &ri)| {
                let c = model(metric, ri, &d);
                let y = point_coords(metric, p);
                [c[0] - y[0], c[1] - y[1]]
            })
            .collect()
    };
    let x0: Vec<f64> = [dp.loss, dp.theta_pn].iter().chain(r).copied().collect();
    let ssr: f64 = residual(&x0).iter().map(|v| v * v).sum();
    let h = 1e-6;
    let mut jac = DMatrix::<f64>::zeros(2 * n, k);
    for (j, &col) in cols.iter().enumerate() {
        let (mut xp, mut xm) = (x0.clone(), x0.clone());
        xp[col] += h;
        xm[col] -= h;
        let (ep, em) = (residual(&xp), residual(&xm));
        for row in 0..2 * n {
            jac[(row, j)] = (ep[row] - em[row]) / (2.0 * h);
        }
    }
    let cov = (jac.transpose() * &jac).try_inverse()?;
    let s2 = ssr / (2 * n - k) as f64;
    let sd = |j: usize| {
        let v = s2 * cov[(j, j)];
        (v.is_finite() && v >= 0.0).then(|| v.sqrt())
    };
    let loss = if fit_loss { sd(0) } else { None };
    let theta_pn = if fit_theta { sd(usize::from(fit_loss)) } else { None };
    Some(SigmaBand { loss, theta_pn })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub sqz_db: f64,
    pub asqz_db: f64,
    pub r_proj: f64,
    pub residual_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub r: f64,
    pub sqz_db: f64,
    pub asqz_db: f64,
}

/// Serializable summary including the fitted curve for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationReport {
    pub loss: f64,
    pub theta_pn: f64,
    pub sigma_band: Option<SigmaBand>,
    pub metric: FitMetric,
    pub objective: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
    pub points: Vec<PointReport>,
    pub curve: Vec<CurvePoint>,
}

impl DegradationFit {
    pub fn report(&self, points: &[NoiseLevels], curve_points: usize) -> DegradationReport {
        let r_top = self.r_proj.iter().cloned().fold(0.0, f64::max).max(0.5) * 1.1;
        let r_top = r_top.min(R_PROJ_MAX);
        let steps = curve_points.max(2);
        let curve = (0..steps)
            .map(|i| {
                let r = r_top * i as f64 / (steps - 1) as f64;
                let l = super::degraded_levels(r, &self.params);
                CurvePoint {
                    r,
                    sqz_db: l.sqz_db,
                    asqz_db: l.asqz_db,
                }
            })
            .collect();
        DegradationReport {
            loss: self.params.loss,
            theta_pn: self.params.theta_pn,
            sigma_band: self.sigma_band,
            metric: self.metric,
            objective: self.objective,
            converged: self.converged,
            warnings: self.warnings.clone(),
            points: points
                .iter()
                .zip(self.r_proj.iter().zip(&self.residuals))
                .map(|(p, (&r, &d))| PointReport {
                    sqz_db: p.sqz_db,
                    asqz_db: p.asqz_db,
                    r_proj: r,
                    residual_db: d,
                })
                .collect(),
            curve,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::degraded_levels;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn synthetic(dp: &DegradationParams) -> Vec<NoiseLevels> {
        (1..=12)
            .map(|i| degraded_levels(0.1 + (i - 1) as f64 * 1.4 / 11.0, dp))
            .collect()
    }

    #[test]
    fn noiseless_recovery() {
        let truth = DegradationParams::new(0.12, 0.035).unwrap();
        let pts = synthetic(&truth);
        let fit = fit_degradation(&pts).unwrap();
        assert!((fit.params.loss - 0.12).abs() <= 0.005, "{:?}", fit.params);
        assert!((fit.params.theta_pn - 0.035).abs() <= 0.002, "{:?}", fit.params);
        assert_eq!(fit.residuals.len(), 12);
        let sum: f64 = fit.residuals.iter().map(|d| d * d).sum();
        assert!((sum - fit.objective).abs() <= 1e-9);
        assert!(fit.objective < 1e-8, "{}", fit.objective);
    }

    #[test]
    fn linear_metric_recovery() {
        let truth = DegradationParams::new(0.2, 0.05).unwrap();
        let fit = fit_degradation_with(
            &synthetic(&truth),
            &FitOptions {
                metric: FitMetric::Linear,
                ..FitOptions::default()
            },
        )
        .unwrap();
        assert!((fit.params.loss - 0.2).abs() <= 0.005, "{:?}", fit.params);
        assert!((fit.params.theta_pn - 0.05).abs() <= 0.002, "{:?}", fit.params);
    }

    #[test]
    fn optimum_beats_start_grid() {
        let truth = DegradationParams::new(0.3, 0.07).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.2).unwrap();
        let pts: Vec<NoiseLevels> = synthetic(&truth)
            .into_iter()
            .map(|p| NoiseLevels {
                sqz_db: p.sqz_db + noise.sample(&mut rng),
                asqz_db: p.asqz_db + noise.sample(&mut rng),
            })
            .collect();
        let fit = fit_degradation(&pts).unwrap();
        for dp in coarse_grid() {
            assert!(fit.objective <= objective(&pts, &dp, FitMetric::Db) + 1e-12);
        }
        let band = fit.sigma_band.unwrap();
        assert!(band.loss.unwrap() > 0.0 && band.theta_pn.unwrap() > 0.0);
    }

    #[test]
    fn single_ideal_point() {
        let pts = [degraded_levels(0.8, &DegradationParams::ideal())];
        let fit = fit_degradation(&pts).unwrap();
        assert_eq!(fit.params, DegradationParams::ideal());
        assert_eq!(fit.residuals, vec![0.0]);
        assert!((fit.r_proj[0] - 0.8).abs() < 1e-12);
        assert!(!fit.warnings.is_empty());
    }

    #[test]
    fn rejected_inputs() {
        let dp = DegradationParams::new(0.1, 0.02).unwrap();
        let two: Vec<NoiseLevels> = synthetic(&dp).into_iter().take(2).collect();
        assert!(matches!(fit_degradation(&two), Err(Error::Fit(_))));
        let mut bad = synthetic(&dp);
        bad[3].asqz_db = -0.5;
        assert!(matches!(fit_degradation(&bad), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn report_shape() {
        let dp = DegradationParams::new(0.1, 0.02).unwrap();
        let pts = synthetic(&dp);
        let fit = fit_degradation(&pts).unwrap();
        let rep = fit.report(&pts, 50);
        assert_eq!(rep.points.len(), 12);
        assert_eq!(rep.curve.len(), 50);
        let json = serde_json::to_value(&rep).unwrap();
        for key in ["loss", "theta_pn", "sigma_band", "points", "curve"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
