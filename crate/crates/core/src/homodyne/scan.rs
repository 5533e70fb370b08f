use std::f64::consts::TAU;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{quadrature_variance, wrap_angle, SqueezedThermalParams};

pub const MIN_SCAN_POINTS: usize = 16;

/// Local-oscillator phase layout of a scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseMode {
    /// i.i.d. uniform phases on `[0, 2π)`, sorted ascending.
    UniformRandomSorted,
    /// Equally spaced phases `2π i / n`.
    LinearRamp,
    /// Up-then-down sweep over `[0, 2π]`, kept in sweep order.
    Triangle,
}

impl std::str::FromStr for PhaseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-random-sorted" | "uniform" => Ok(Self::UniformRandomSorted),
            "linear-ramp" | "ramp" => Ok(Self::LinearRamp),
            "triangle" => Ok(Self::Triangle),
            other => Err(Error::InvalidParameter(format!("unknown phase mode {other:?}"))),
        }
    }
}

/// Paired LO phases (radians, `[0, 2π)`) and quadrature samples in
/// shot-noise units.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureScan {
    phases: Vec<f64>,
    values: Vec<f64>,
}

impl QuadratureScan {
    pub fn new(phases: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if phases.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: phases.len(),
                got: values.len(),
            });
        }
        if phases.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite scan entry".into()));
        }
        let phases = phases.into_iter().map(wrap_angle).collect();
        Ok(Self { phases, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_sorted(&self) -> bool {
        self.phases.windows(2).all(|w| w[0] <= w[1])
    }

    /// Same samples reordered by ascending phase.
    pub fn sorted(&self) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.phases[a].total_cmp(&self.phases[b]));
        Self {
            phases: order.iter().map(|&i| self.phases[i]).collect(),
            values: order.iter().map(|&i| self.values[i]).collect(),
        }
    }

    /// Draws `n` distinct points uniformly and returns them in phase order.
    pub fn resample(&self, n: usize, seed: u64) -> Result<Self> {
        if n > self.len() {
            return Err(Error::InvalidParameter(format!(
                "cannot draw {n} points from a scan of {}",
                self.len()
            )));
        }
        let sorted = if self.is_sorted() { self.clone() } else { self.sorted() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks = index::sample(&mut rng, sorted.len(), n).into_vec();
        picks.sort_unstable();
        Ok(Self {
            phases: picks.iter().map(|&i| sorted.phases[i]).collect(),
            values: picks.iter().map(|&i| sorted.values[i]).collect(),
        })
    }
}

fn phase_layout(mode: PhaseMode, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match mode {
        PhaseMode::UniformRandomSorted => {
            let mut p: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * TAU).collect();
            p.sort_by(f64::total_cmp);
            p
        }
        PhaseMode::LinearRamp => (0..n).map(|i| TAU * i as f64 / n as f64).collect(),
        PhaseMode::Triangle => (0..n)
            .map(|i| {
                let s = (i as f64 + 0.5) / n as f64;
                let tri = if s < 0.5 { 2.0 * s } else { 2.0 - 2.0 * s };
                wrap_angle(TAU * tri)
            })
            .collect(),
    }
}

/// Simulated homodyne scan: each sample is drawn from a zero-mean Gaussian
/// whose variance is the state's quadrature variance at that phase.
pub fn sample_scan(
    params: &SqueezedThermalParams,
    n_points: usize,
    mode: PhaseMode,
    seed: u64,
) -> Result<QuadratureScan> {
    if n_points < MIN_SCAN_POINTS {
        return Err(Error::InvalidParameter(format!(
            "scan needs at least {MIN_SCAN_POINTS} points, got {n_points}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases = phase_layout(mode, n_points, &mut rng);
    let values = draw_quadratures(params, &phases, &mut rng);
    Ok(QuadratureScan { phases, values })
}

fn draw_quadratures(params: &SqueezedThermalParams, phases: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    phases
        .iter()
        .map(|&phi| {
            let z: f64 = rng.sample(StandardNormal);
            quadrature_variance(params, phi).sqrt() * z
        })
        .collect()
}

/// Quadrature samples at caller-chosen LO phases.
pub fn sample_quadratures(params: &SqueezedThermalParams, phases: &[f64], seed: u64) -> Vec<f64> {
    draw_quadratures(params, phases, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Sample statistics of one equal-width phase bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseBin {
    pub center: f64,
    /// Phase width the samples were pooled over; 0 for point values.
    #[serde(default)]
    pub width: f64,
    /// Unbiased sample variance; 0 when `count < 2`.
    pub variance: f64,
    pub count: usize,
}

pub fn binned_variances(scan: &QuadratureScan, bins: usize) -> Result<Vec<PhaseBin>> {
    if bins < 4 {
        return Err(Error::InvalidParameter(format!("bin count {bins} < 4")));
    }
    if scan.len() < 4 * bins {
        return Err(Error::InvalidParameter(format!(
            "scan of {} points is too short for {bins} bins",
            scan.len()
        )));
    }
    let width = TAU / bins as f64;
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for (&phi, &x) in scan.phases.iter().zip(&scan.values) {
        let k = ((phi / width) as usize).min(bins - 1);
        members[k].push(x);
    }
    Ok(members
        .iter()
        .enumerate()
        .map(|(k, xs)| {
            let n = xs.len();
            let variance = if n >= 2 {
                let mean = xs.iter().sum::<f64>() / n as f64;
                xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            PhaseBin {
                center: (k as f64 + 0.5) * width,
                width,
                variance,
                count: n,
            }
        })
        .collect())
}
