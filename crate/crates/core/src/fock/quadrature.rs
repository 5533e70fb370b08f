use std::f64::consts::PI;

use num_complex::Complex64;

use super::{FockDensityMatrix, SqueezedThermalParams};

/// Gaussian-state variance of `X_θ` for the squeezed thermal family.
/// Minimal at `θ_lo = θ_s / 2`.
pub fn quadrature_variance(params: &SqueezedThermalParams, theta_lo: f64) -> f64 {
    let phi = theta_lo - params.theta_s() / 2.0;
    let (s, c) = phi.sin_cos();
    let r2 = 2.0 * params.r();
    (2.0 * params.n_th() + 1.0) * ((-r2).exp() * c * c + r2.exp() * s * s)
}

/// Number-basis wavefunctions `ψ_n(x)`, `n < m`, scaled for vacuum variance 1:
/// `|ψ_0(x)|² = (2π)^{-1/2} e^{-x²/2}`.
pub fn hermite_functions(x: f64, m: usize) -> Vec<f64> {
    let mut psi = Vec::with_capacity(m);
    if m == 0 {
        return psi;
    }
    psi.push((2.0 * PI).powf(-0.25) * (-x * x / 4.0).exp());
    if m > 1 {
        psi.push(x * psi[0]);
    }
    for n in 1..m.saturating_sub(1) {
        // x ψ_n = sqrt(n) ψ_{n-1} + sqrt(n+1) ψ_{n+1}
        let next = (x * psi[n] - (n as f64).sqrt() * psi[n - 1]) / ((n + 1) as f64).sqrt();
        psi.push(next);
    }
    psi
}

/// Components `⟨n|x_θ⟩ = e^{inθ} ψ_n(x)` of the rotated quadrature eigenstate.
pub(crate) fn quadrature_ket(theta: f64, x: f64, m: usize) -> Vec<Complex64> {
    hermite_functions(x, m)
        .into_iter()
        .enumerate()
        .map(|(n, p)| Complex64::from_polar(p, n as f64 * theta))
        .collect()
}

/// Marginal density `⟨x_θ|ρ|x_θ⟩`.
pub fn quadrature_pdf(rho: &FockDensityMatrix, theta_lo: f64, x: f64) -> f64 {
    let v = quadrature_ket(theta_lo, x, rho.dim());
    let mat = rho.matrix();
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..v.len() {
        let mut row = Complex64::new(0.0, 0.0);
        for k in 0..v.len() {
            row += mat[(j, k)] * v[k];
        }
        acc += v[j].conj() * row;
    }
    acc.re.max(0.0)
}

/// `(⟨X_θ⟩, ⟨X_θ²⟩)` using `X_θ² = a² e^{-2iθ} + a†² e^{2iθ} + 2n + 1`.
pub fn quadrature_moments(rho: &FockDensityMatrix, theta_lo: f64) -> (f64, f64) {
    let (a1, a2, n) = ladder_moments(rho);
    let mean = 2.0 * (Complex64::from_polar(1.0, -theta_lo) * a1).re;
    let second = 2.0 * (Complex64::from_polar(1.0, -2.0 * theta_lo) * a2).re + 2.0 * n + 1.0;
    (mean, second)
}

pub fn quadrature_variance_of(rho: &FockDensityMatrix, theta_lo: f64) -> f64 {
    let (mean, second) = quadrature_moments(rho, theta_lo);
    second - mean * mean
}

/// `⟨a⟩`, `⟨a²⟩`, `⟨n⟩`.
fn ladder_moments(rho: &FockDensityMatrix) -> (Complex64, Complex64, f64) {
    let mat = rho.matrix();
    let m = rho.dim();
    let mut a1 = Complex64::new(0.0, 0.0);
    let mut a2 = Complex64::new(0.0, 0.0);
    let mut n_mean = 0.0;
    for n in 0..m {
        n_mean += n as f64 * mat[(n, n)].re;
        if n + 1 < m {
            a1 += ((n + 1) as f64).sqrt() * mat[(n + 1, n)];
        }
        if n + 2 < m {
            a2 += (((n + 1) * (n + 2)) as f64).sqrt() * mat[(n + 2, n)];
        }
    }
    (a1, a2, n_mean)
}

/// Exact decomposition `V(θ) = a + b cos 2θ + c sin 2θ`, valid for any state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceHarmonics {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl VarianceHarmonics {
    pub fn at(&self, theta: f64) -> f64 {
        self.a + self.b * (2.0 * theta).cos() + self.c * (2.0 * theta).sin()
    }

    pub fn amplitude(&self) -> f64 {
        self.b.hypot(self.c)
    }

    pub fn min(&self) -> f64 {
        self.a - self.amplitude()
    }

    pub fn max(&self) -> f64 {
        self.a + self.amplitude()
    }
}

pub fn variance_harmonics(rho: &FockDensityMatrix) -> VarianceHarmonics {
    let (a1, a2, n) = ladder_moments(rho);
    let (p, q) = (a1.re, a1.im);
    VarianceHarmonics {
        a: 2.0 * n + 1.0 - 2.0 * a1.norm_sqr(),
        b: 2.0 * a2.re - 2.0 * (p * p - q * q),
        c: 2.0 * a2.im - 4.0 * p * q,
    }
}
