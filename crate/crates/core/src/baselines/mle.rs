use std::f64::consts::TAU;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{hermitian_eigen, hermitize, hermite_functions, CMatrix, FockDensityMatrix};
use crate::homodyne::QuadratureScan;

/// Sub-phases per phase bin used to average the projectors over the bin width.
const SUB_PHASES: usize = 4;
/// Smallest mixing weight tried before a step is declared stalled.
const MIN_STEP: f64 = 1.0 / 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    /// Reconstruction dimension.
    pub m: usize,
    /// Quadrature grid covers `[-x_max, x_max]`.
    pub x_max: f64,
    pub x_bins: usize,
    pub phase_bins: usize,
    pub max_iter: usize,
    /// Stop once the trace distance between iterates drops below this.
    pub tol: f64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            m: 15,
            x_max: 12.0,
            x_bins: 256,
            phase_bins: 24,
            max_iter: 2000,
            tol: 1e-7,
        }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::InvalidParameter("reconstruction dimension must be ≥ 1".into()));
        }
        if !(self.x_max > 0.0 && self.x_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("x_max {} must be positive", self.x_max)));
        }
        if self.x_bins < 32 {
            return Err(Error::InvalidParameter(format!("x_bins {} < 32", self.x_bins)));
        }
        if self.phase_bins < 1 {
            return Err(Error::InvalidParameter("phase_bins must be ≥ 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidParameter("tol must be ≥ 0".into()));
        }
        Ok(())
    }

    fn dx(&self) -> f64 {
        2.0 * self.x_max / self.x_bins as f64
    }
}

#[derive(Debug, Clone)]
pub struct MleOutcome {
    pub rho: FockDensityMatrix,
    /// Log-likelihood of the start point followed by one entry per accepted step.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Counts of one phase bin, restricted to occupied x bins.
struct PhaseRow {
    sub_phases: [f64; SUB_PHASES],
    /// `ψ_n(x_b)` for each occupied x bin, one column per bin.
    psi: DMatrix<f64>,
    counts: Vec<f64>,
}

struct Histogram {
    m: usize,
    /// Projector weight `Δx / SUB_PHASES`.
    weight: f64,
    total: f64,
    rows: Vec<PhaseRow>,
}

impl Histogram {
    fn build(cfg: &MleConfig, cells: &[Vec<f64>]) -> Self {
        let dx = cfg.dx();
        let width = TAU / cfg.phase_bins as f64;
        let mut rows = Vec::new();
        let mut total = 0.0;
        for (k, row) in cells.iter().enumerate() {
            let occupied: Vec<usize> = (0..cfg.x_bins).filter(|&b| row[b] > 0.0).collect();
            if occupied.is_empty() {
                continue;
            }
            let mut psi = DMatrix::zeros(cfg.m, occupied.len());
            for (col, &b) in occupied.iter().enumerate() {
                let x = -cfg.x_max + (b as f64 + 0.5) * dx;
                psi.set_column(col, &nalgebra::DVector::from_vec(hermite_functions(x, cfg.m)));
            }
            let counts: Vec<f64> = occupied.iter().map(|&b| row[b]).collect();
            total += counts.iter().sum::<f64>();
            let lo = k as f64 * width;
            let sub_phases = std::array::from_fn(|s| lo + (s as f64 + 0.5) * width / SUB_PHASES as f64);
            rows.push(PhaseRow { sub_phases, psi, counts });
        }
        Self {
            m: cfg.m,
            weight: dx / SUB_PHASES as f64,
            total,
            rows,
        }
    }

    /// Predicted bin probabilities `Tr[Π_j ρ]` for every occupied cell.
    fn probabilities(&self, rho: &CMatrix) -> Vec<Vec<f64>> {
        let m = self.m;
        self.rows
            .iter()
            .map(|row| {
                let mut p = vec![0.0; row.counts.len()];
                for &theta in &row.sub_phases {
                    // ⟨x_θ|ρ|x_θ⟩ = ψᵀ Re(ρ_jk e^{-i(j-k)θ}) ψ
                    let a = DMatrix::from_fn(m, m, |j, k| {
                        (rho[(j, k)] * Complex64::from_polar(1.0, -(j as f64 - k as f64) * theta)).re
                    });
                    let ap = &a * &row.psi;
                    for (b, pb) in p.iter_mut().enumerate() {
                        *pb += row.psi.column(b).dot(&ap.column(b));
                    }
                }
                p.iter_mut().for_each(|v| *v *= self.weight);
                p
            })
            .collect()
    }

    fn log_likelihood(&self, probs: &[Vec<f64>]) -> f64 {
        self.rows
            .iter()
            .zip(probs)
            .map(|(row, p)| row.counts.iter().zip(p).map(|(&n, &q)| n * q.ln()).sum::<f64>())
            .sum()
    }

    /// `R = Σ_j (f_j / p_j) Π_j`.
    fn r_operator(&self, probs: &[Vec<f64>]) -> CMatrix {
        let m = self.m;
        let mut r = CMatrix::zeros(m, m);
        for (row, p) in self.rows.iter().zip(probs) {
            let mut scaled = row.psi.clone();
            for (b, mut col) in scaled.column_iter_mut().enumerate() {
                col *= row.counts[b] / (self.total * p[b]);
            }
            let g = &scaled * row.psi.transpose();
            for &theta in &row.sub_phases {
                for j in 0..m {
                    for k in 0..m {
                        r[(j, k)] += Complex64::from_polar(g[(j, k)] * self.weight, (j as f64 - k as f64) * theta);
                    }
                }
            }
        }
        hermitize(&mut r);
        r
    }
}

fn check_support(probs: &[Vec<f64>]) -> Result<()> {
    if probs.iter().flatten().any(|&p| !(p > 0.0)) {
        return Err(Error::InvalidParameter(
            "occupied histogram cell has zero predicted probability; widen the quadrature grid or raise m".into(),
        ));
    }
    Ok(())
}

fn trace_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    let diff = a - b;
    0.5 * hermitian_eigen(&diff).eigenvalues.iter().map(|l| l.abs()).sum::<f64>()
}

fn normalized(mut m: CMatrix) -> CMatrix {
    hermitize(&mut m);
    let tr = m.trace().re;
    m / Complex64::new(tr, 0.0)
}

/// Runs the fixed-point iteration on a (phase bin × x bin) count table.
fn iterate(cfg: &MleConfig, cells: &[Vec<f64>], start: CMatrix) -> Result<MleOutcome> {
    let hist = Histogram::build(cfg, cells);
    let mut rho = start;
    let mut probs = hist.probabilities(&rho);
    check_support(&probs)?;
    let mut ll = hist.log_likelihood(&probs);
    let mut history = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let eye = CMatrix::identity(cfg.m, cfg.m);

    while iterations < cfg.max_iter {
        let r = hist.r_operator(&probs);
        // Plain RρR first; if it lowers the likelihood, fall back to the
        // damped map (I + εR)ρ(I + εR) with shrinking ε, which always
        // increases it for small enough ε away from the optimum.
        let mut step = None;
        let mut eps = f64::INFINITY;
        while eps >= MIN_STEP {
            let k = if eps.is_infinite() { r.clone() } else { &eye + &r * Complex64::new(eps, 0.0) };
            let cand = normalized(&k * &rho * &k);
            let cand_probs = hist.probabilities(&cand);
            if cand_probs.iter().flatten().all(|&p| p > 0.0) {
                let cand_ll = hist.log_likelihood(&cand_probs);
                if cand_ll >= ll {
                    step = Some((cand, cand_probs, cand_ll));
                    break;
                }
            }
            eps = if eps.is_infinite() { 1.0 } else { eps / 2.0 };
        }
        let Some((cand, cand_probs, cand_ll)) = step else {
            converged = true;
            break;
        };
        iterations += 1;
        let moved = trace_distance(&cand, &rho);
        rho = cand;
        probs = cand_probs;
        ll = cand_ll;
        history.push(ll);
        if moved < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(MleOutcome {
        rho: FockDensityMatrix::from_trusted(rho),
        log_likelihood: history,
        iterations,
        converged,
    })
}

fn histogram(scan: &QuadratureScan, cfg: &MleConfig) -> Result<Vec<Vec<f64>>> {
    let max_abs = scan.values().iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    if max_abs + 3.0 > cfg.x_max {
        return Err(Error::InvalidParameter(format!(
            "quadrature grid ±{} does not cover max |x| = {max_abs:.3} plus margin 3; widen the grid",
            cfg.x_max
        )));
    }
    let dx = cfg.dx();
    let width = TAU / cfg.phase_bins as f64;
    let mut cells = vec![vec![0.0; cfg.x_bins]; cfg.phase_bins];
    for (&phi, &x) in scan.phases().iter().zip(scan.values()) {
        let k = ((phi / width) as usize).min(cfg.phase_bins - 1);
        let b = (((x + cfg.x_max) / dx) as usize).min(cfg.x_bins - 1);
        cells[k][b] += 1.0;
    }
    Ok(cells)
}

/// Maximum-likelihood density matrix from a binned homodyne scan, starting
/// from the maximally mixed state.
pub fn mle_reconstruct(scan: &QuadratureScan, cfg: &MleConfig) -> Result<MleOutcome> {
    cfg.validate()?;
    if scan.is_empty() {
        return Err(Error::InvalidParameter("empty scan".into()));
    }
    let cells = histogram(scan, cfg)?;
    let start = CMatrix::identity(cfg.m, cfg.m) / Complex64::new(cfg.m as f64, 0.0);
    iterate(cfg, &cells, start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{fidelity, squeezed_thermal_state, SqueezedThermalParams};
    use crate::homodyne::{sample_scan, PhaseMode};

    fn small_cfg(m: usize) -> MleConfig {
        MleConfig {
            m,
            x_bins: 128,
            phase_bins: 12,
            max_iter: 300,
            ..MleConfig::default()
        }
    }

    #[test]
    fn vacuum_scan() {
        let scan = sample_scan(&SqueezedThermalParams::vacuum(), 4096, PhaseMode::UniformRandomSorted, 1).unwrap();
        let out = mle_reconstruct(&scan, &MleConfig { m: 10, ..MleConfig::default() }).unwrap();
        let f = fidelity(&out.rho, &FockDensityMatrix::vacuum(10)).unwrap();
        assert!(f >= 0.99, "{f}");
    }

    #[test]
    fn likelihood_monotone_and_trace_one() {
        let p = SqueezedThermalParams::new(0.4, 1.0, 0.1).unwrap();
        let scan = sample_scan(&p, 2048, PhaseMode::UniformRandomSorted, 3).unwrap();
        let out = mle_reconstruct(&scan, &small_cfg(8)).unwrap();
        assert!(out.iterations > 0);
        for w in out.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "{} -> {}", w[0], w[1]);
        }
        assert!((out.rho.matrix().trace().re - 1.0).abs() < 1e-10);
        assert!(out.rho.eigenvalues().iter().all(|&l| l > -1e-10));
    }

    #[test]
    fn exact_histogram_is_a_fixed_point() {
        let cfg = small_cfg(6);
        let p = SqueezedThermalParams::new(0.3, 0.5, 0.05).unwrap();
        // full-rank truth so no cell is empty for the model
        let truth = squeezed_thermal_state(&p, 6, 40).unwrap();
        // counts proportional to the projector probabilities of the truth,
        // including the cells far in the tails
        let mut cells = vec![vec![1.0; cfg.x_bins]; cfg.phase_bins];
        let probe = Histogram::build(&cfg, &cells);
        let probs = probe.probabilities(truth.matrix());
        for (k, row) in cells.iter_mut().enumerate() {
            for (b, c) in row.iter_mut().enumerate() {
                *c = 1e6 * probs[k][b];
            }
        }
        let hist = Histogram::build(&cfg, &cells);
        let r = hist.r_operator(&hist.probabilities(truth.matrix()));
        let next = normalized(&r * truth.matrix() * &r);
        assert!(trace_distance(&next, truth.matrix()) < 1e-8);
    }

    #[test]
    fn narrow_grid_rejected() {
        let p = SqueezedThermalParams::new(1.0, 0.0, 0.0).unwrap();
        let scan = sample_scan(&p, 1024, PhaseMode::LinearRamp, 2).unwrap();
        let cfg = MleConfig {
            x_max: 4.0,
            ..small_cfg(6)
        };
        assert!(matches!(mle_reconstruct(&scan, &cfg), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn unreachable_cell_rejected() {
        // a cell far out in x cannot be reached by an m=1 (vacuum) model
        let cfg = MleConfig {
            m: 1,
            x_max: 60.0,
            ..small_cfg(1)
        };
        let mut cells = vec![vec![0.0; cfg.x_bins]; cfg.phase_bins];
        cells[0][cfg.x_bins - 1] = 1.0;
        let start = CMatrix::identity(1, 1);
        assert!(iterate(&cfg, &cells, start).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(MleConfig { x_bins: 16, ..MleConfig::default() }.validate().is_err());
        assert!(MleConfig { m: 0, ..MleConfig::default() }.validate().is_err());
        assert!(MleConfig::default().validate().is_ok());
    }
}
