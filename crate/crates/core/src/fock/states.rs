use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{CMatrix, FockDensityMatrix, SqueezedThermalParams};
use crate::error::{Error, Result};

/// Minimum probability mass the `m`-level projection must retain.
pub const DEFAULT_MASS_FLOOR: f64 = 0.99;

/// Geometric thermal populations `n_th^n / (1+n_th)^(n+1)` for `n < m`,
/// not renormalized.
pub fn thermal_populations(n_th: f64, m: usize) -> Result<Vec<f64>> {
    if !n_th.is_finite() || n_th < 0.0 {
        return Err(Error::InvalidParameter(format!("n_th = {n_th}")));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("dimension m = 0".into()));
    }
    let ratio = n_th / (1.0 + n_th);
    let mut p = Vec::with_capacity(m);
    let mut cur = 1.0 / (1.0 + n_th);
    for _ in 0..m {
        p.push(cur);
        cur *= ratio;
    }
    Ok(p)
}

/// Thermal state truncated to `m` levels and renormalized. Also returns the
/// probability mass kept before renormalization.
pub fn thermal_state(n_th: f64, m: usize) -> Result<(FockDensityMatrix, f64)> {
    let p = thermal_populations(n_th, m)?;
    let mass: f64 = p.iter().sum();
    let data = CMatrix::from_fn(m, m, |i, j| {
        if i == j {
            Complex64::new(p[i] / mass, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    Ok((FockDensityMatrix { data }, mass))
}

/// Working dimension used when none is given: `max(2m, m + ceil(20 sinh² r))`.
pub fn default_working_dim(m: usize, r: f64) -> usize {
    let s = r.sinh();
    (2 * m).max(m + (20.0 * s * s).ceil() as usize)
}

/// Real squeeze operator `S(r, 0)` on `m_work` levels.
///
/// The generator only couples `n` to `n ± 2`, so the even and odd sectors are
/// exponentiated separately.
fn squeeze_real(r: f64, m_work: usize) -> DMatrix<f64> {
    let mut s = DMatrix::<f64>::zeros(m_work, m_work);
    for parity in 0..2 {
        let idx: Vec<usize> = (parity..m_work).step_by(2).collect();
        let k = idx.len();
        let mut gen = DMatrix::<f64>::zeros(k, k);
        for i in 1..k {
            let n = idx[i];
            // a² |n> = sqrt(n(n-1)) |n-2>,  a†² |n-2> = sqrt(n(n-1)) |n>
            let amp = 0.5 * r * ((n * (n - 1)) as f64).sqrt();
            gen[(i - 1, i)] = amp;
            gen[(i, i - 1)] = -amp;
        }
        let block = gen.exp();
        for (bi, &i) in idx.iter().enumerate() {
            for (bj, &j) in idx.iter().enumerate() {
                s[(i, j)] = block[(bi, bj)];
            }
        }
    }
    s
}

/// Rotation phase `e^{iθ(j-k)/2}` relating `S(r, θ)` to `S(r, 0)`. Only
/// entries with even `j - k` are ever nonzero.
fn rotation_phase(theta_s: f64, j: usize, k: usize) -> Complex64 {
    Complex64::from_polar(1.0, 0.5 * theta_s * (j as f64 - k as f64))
}

fn with_rotation(real: &DMatrix<f64>, theta_s: f64) -> CMatrix {
    CMatrix::from_fn(real.nrows(), real.ncols(), |j, k| {
        let v = real[(j, k)];
        if v == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            rotation_phase(theta_s, j, k) * v
        }
    })
}

/// `exp[(ξ* a² − ξ a†²)/2]` on the first `m_work` number states, as a dense
/// matrix exponential of the truncated generator.
pub fn squeeze_operator(r: f64, theta_s: f64, m_work: usize) -> Result<CMatrix> {
    if !r.is_finite() || r < 0.0 {
        return Err(Error::InvalidParameter(format!("r = {r}")));
    }
    if m_work < 2 {
        return Err(Error::InvalidParameter(format!("working dimension {m_work} < 2")));
    }
    if r == 0.0 {
        return Ok(CMatrix::identity(m_work, m_work));
    }
    Ok(with_rotation(&squeeze_real(r, m_work), theta_s))
}

/// Real part of the unrotated state restricted to the first `rows` levels,
/// `B B^T` with `B = S(r,0)[..rows, ..] sqrt(ρ_th)`.
fn unrotated_block(params: &SqueezedThermalParams, rows: usize, m_work: usize) -> Result<DMatrix<f64>> {
    let pops = thermal_populations(params.n_th(), m_work)?;
    let total: f64 = pops.iter().sum();
    // thermal weights below this contribute nothing at double precision
    let cols = pops.iter().take_while(|&&p| p / total > 1e-30).count().max(1);
    let s = if params.r() == 0.0 {
        DMatrix::<f64>::identity(m_work, m_work)
    } else {
        squeeze_real(params.r(), m_work)
    };
    let mut b = s.view((0, 0), (rows, cols)).into_owned();
    for j in 0..cols {
        b.column_mut(j).scale_mut((pops[j] / total).sqrt());
    }
    Ok(&b * b.transpose())
}

/// `S ρ_th S†` on the full working space, before projection.
pub fn squeezed_thermal_full(params: &SqueezedThermalParams, m_work: usize) -> Result<CMatrix> {
    if m_work < 2 {
        return Err(Error::InvalidParameter(format!("working dimension {m_work} < 2")));
    }
    let block = unrotated_block(params, m_work, m_work)?;
    Ok(with_rotation(&block, params.theta_s()))
}

/// Probability that the state built at `m_work` has fewer than `m` photons.
pub fn fock_mass(params: &SqueezedThermalParams, m: usize, m_work: usize) -> Result<f64> {
    let m_work = m_work.max(m).max(2);
    let block = unrotated_block(params, m, m_work)?;
    Ok(block.trace())
}

/// State on the smallest dimension of the sequence `start, ⌈1.5·start⌉, …`
/// whose block (built at twice that size) holds at least `target` of the
/// probability. Returns the state, its dimension and the kept mass.
pub fn adaptive_state(
    params: &SqueezedThermalParams,
    target: f64,
    start: usize,
    max_m: usize,
) -> Result<(FockDensityMatrix, usize, f64)> {
    let mut m = start.max(2);
    loop {
        let block = unrotated_block(params, m, 2 * m)?;
        let mass = block.trace();
        if mass >= target {
            let rho = FockDensityMatrix::from_trusted(with_rotation(&block, params.theta_s()));
            return Ok((rho, m, mass));
        }
        if m >= max_m {
            return Err(Error::InsufficientTruncation { mass, floor: target });
        }
        m = ((m as f64 * 1.5).ceil() as usize).min(max_m);
    }
}

pub fn squeezed_thermal_state(
    params: &SqueezedThermalParams,
    m: usize,
    m_work: usize,
) -> Result<FockDensityMatrix> {
    squeezed_thermal_state_with_floor(params, m, m_work, DEFAULT_MASS_FLOOR)
}

/// Builds `S ρ_th S†` at `m_work`, keeps the top-left `m × m` block and
/// renormalizes it. Fails when the block holds less than `mass_floor`.
pub fn squeezed_thermal_state_with_floor(
    params: &SqueezedThermalParams,
    m: usize,
    m_work: usize,
    mass_floor: f64,
) -> Result<FockDensityMatrix> {
    if m == 0 {
        return Err(Error::InvalidParameter("dimension m = 0".into()));
    }
    if m_work < m {
        return Err(Error::InvalidParameter(format!(
            "working dimension {m_work} below target dimension {m}"
        )));
    }
    let block = unrotated_block(params, m, m_work.max(2))?;
    let mass = block.trace();
    if mass < mass_floor {
        return Err(Error::InsufficientTruncation {
            mass,
            floor: mass_floor,
        });
    }
    Ok(FockDensityMatrix::from_trusted(with_rotation(&block, params.theta_s())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{quadrature_variance, quadrature_variance_of};

    #[test]
    fn zero_temperature_is_vacuum() {
        let (rho, mass) = thermal_state(0.0, 5).unwrap();
        assert_eq!(mass, 1.0);
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == 0 && j == 0 { 1.0 } else { 0.0 };
                assert_eq!(rho.matrix()[(i, j)].re, expect);
            }
        }
    }

    #[test]
    fn thermal_single_photon_population() {
        let (rho, mass) = thermal_state(1.0, 40).unwrap();
        let before = rho.matrix()[(1, 1)].re * mass;
        assert!((before - 0.25).abs() < 1e-15);
    }

    #[test]
    fn thermal_mean_photon_number() {
        let (rho, _) = thermal_state(0.5, 35).unwrap();
        assert!((rho.mean_photon_number() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn thermal_rejects_bad_input() {
        assert!(thermal_state(-0.1, 4).is_err());
        assert!(thermal_state(0.1, 0).is_err());
    }

    #[test]
    fn squeeze_identity_at_zero() {
        let s = squeeze_operator(0.0, 1.3, 10).unwrap();
        assert_eq!(s, CMatrix::identity(10, 10));
    }

    #[test]
    fn squeezed_vacuum_amplitude() {
        let s = squeeze_operator(1.0, 0.0, 70).unwrap();
        let oracle = 1.0 / 1f64.cosh();
        assert!((s[(0, 0)].norm_sqr() - oracle).abs() < 1e-4);
        assert!((s[(0, 0)].norm_sqr() - 0.6481).abs() < 1e-4);
    }

    #[test]
    fn squeezed_vacuum_parity() {
        let s = squeeze_operator(0.5, 0.0, 70).unwrap();
        for n in (1..70).step_by(2) {
            assert!(s[(n, 0)].norm() <= 1e-10);
        }
    }

    #[test]
    fn squeeze_amplitudes_match_closed_form() {
        // <2k|S|0> = (-e^{iθ} tanh r)^k sqrt((2k)!)/(2^k k!) / sqrt(cosh r)
        let (r, th) = (0.7, 0.9);
        let s = squeeze_operator(r, th, 80).unwrap();
        let mut coeff = 1.0 / r.cosh().sqrt();
        for k in 0..10usize {
            let phase = Complex64::from_polar(1.0, th * k as f64) * (-1f64).powi(k as i32);
            let expect = phase * coeff * r.tanh().powi(k as i32);
            assert!((s[(2 * k, 0)] - expect).norm() < 1e-9, "k = {k}");
            // ratio sqrt((2k+2)(2k+1)) / (2(k+1))
            coeff *= (((2 * k + 2) * (2 * k + 1)) as f64).sqrt() / (2.0 * (k + 1) as f64);
        }
    }

    #[test]
    fn unsqueezed_reduces_to_thermal() {
        let p = SqueezedThermalParams::new(0.0, 0.0, 0.3).unwrap();
        let rho = squeezed_thermal_state(&p, 20, 40).unwrap();
        let (th, _) = thermal_state(0.3, 20).unwrap();
        let diff = (rho.matrix() - th.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-14, "{diff}");
    }

    #[test]
    fn squeezed_vacuum_is_pure() {
        let p = SqueezedThermalParams::new(0.5, 1.0, 0.0).unwrap();
        let rho = squeezed_thermal_state(&p, 35, 70).unwrap();
        assert!((rho.purity() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn moments_match_gaussian_variance() {
        // m = 35 leaves a 6.6e-6 tail whose loss shifts the anti-squeezed
        // variance by ~1e-3; m = 50 brings every phase under 1e-4
        let p = SqueezedThermalParams::new(0.8, 0.4, 0.2).unwrap();
        let rho = squeezed_thermal_state(&p, 50, 100).unwrap();
        for k in 0..8 {
            let th = k as f64 * std::f64::consts::PI / 4.0;
            let v = quadrature_variance_of(&rho, th);
            assert!((v - quadrature_variance(&p, th)).abs() <= 1e-4, "θ = {th}");
        }
    }

    #[test]
    fn mass_floor_is_enforced() {
        let p = SqueezedThermalParams::new(1.75, 0.0, 1.2).unwrap();
        match squeezed_thermal_state(&p, 10, 80) {
            Err(Error::InsufficientTruncation { mass, floor }) => {
                assert!(mass < floor);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn working_dim_rule() {
        assert_eq!(default_working_dim(35, 0.0), 70);
        let s = 1.4f64.sinh();
        assert_eq!(default_working_dim(35, 1.4), 35 + (20.0 * s * s).ceil() as usize);
    }
}
