use nalgebra::DVector;
use num_complex::Complex64;

use super::{hermitian_defect, hermitian_eigen, CMatrix, FockDensityMatrix, HERMITIAN_TOL, PSD_TOL};
use crate::error::{Error, Result};

/// Lower-triangular `L` with real nonnegative diagonal, `ρ = L L† / Tr(L L†)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    data: CMatrix,
}

impl CholeskyFactor {
    /// Checks triangularity and the diagonal constraint.
    pub fn new(data: CMatrix) -> Result<Self> {
        if !data.is_square() || data.nrows() == 0 {
            return Err(Error::InvalidParameter("Cholesky factor must be square".into()));
        }
        let m = data.nrows();
        for i in 0..m {
            let d = data[(i, i)];
            if d.im != 0.0 || d.re < 0.0 || !d.re.is_finite() {
                return Err(Error::InvalidParameter(format!("diagonal entry {i} = {d}")));
            }
            for j in i + 1..m {
                if data[(i, j)] != Complex64::new(0.0, 0.0) {
                    return Err(Error::InvalidParameter(format!("upper entry ({i},{j}) nonzero")));
                }
            }
        }
        Ok(Self { data })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.data
    }

    /// Number of reals in the packed form: `m` diagonals plus `m(m-1)` for the
    /// strictly lower triangle, `m²` in total.
    pub fn packed_len(m: usize) -> usize {
        m * m
    }

    /// `m` real diagonals, then `(re, im)` of each strictly-lower entry in
    /// row-major order.
    pub fn pack(&self) -> Vec<f64> {
        let m = self.dim();
        let mut out = Vec::with_capacity(m * m);
        out.extend((0..m).map(|i| self.data[(i, i)].re));
        for i in 1..m {
            for j in 0..i {
                let z = self.data[(i, j)];
                out.push(z.re);
                out.push(z.im);
            }
        }
        out
    }

    /// Inverse of [`CholeskyFactor::pack`]; rejects negative diagonals.
    pub fn unpack(m: usize, packed: &[f64]) -> Result<Self> {
        Self::new(unpack_raw(m, packed)?)
    }

    /// Unpacks arbitrary reals (e.g. network outputs). Columns with a negative
    /// diagonal are negated, which leaves `L L†` unchanged.
    pub fn unpack_lenient(m: usize, packed: &[f64]) -> Result<Self> {
        let mut data = unpack_raw(m, packed)?;
        for j in 0..m {
            if data[(j, j)].re < 0.0 {
                for i in j..m {
                    data[(i, j)] = -data[(i, j)];
                }
            }
        }
        Self::new(data)
    }
}

fn unpack_raw(m: usize, packed: &[f64]) -> Result<CMatrix> {
    if m == 0 {
        return Err(Error::InvalidParameter("dimension m = 0".into()));
    }
    if packed.len() != m * m {
        return Err(Error::DimensionMismatch {
            expected: m * m,
            got: packed.len(),
        });
    }
    if packed.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite packed entry".into()));
    }
    let mut data = CMatrix::zeros(m, m);
    for i in 0..m {
        data[(i, i)] = Complex64::new(packed[i], 0.0);
    }
    let mut k = m;
    for i in 1..m {
        for j in 0..i {
            data[(i, j)] = Complex64::new(packed[k], packed[k + 1]);
            k += 2;
        }
    }
    Ok(data)
}

/// Factor a Hermitian PSD matrix. Eigenvalues in `[-1e-10, 0)` are clipped;
/// anything more negative is rejected.
pub fn cholesky_factor(rho: &FockDensityMatrix) -> Result<CholeskyFactor> {
    cholesky_of_matrix(rho.matrix())
}

pub(crate) fn cholesky_of_matrix(a: &CMatrix) -> Result<CholeskyFactor> {
    let m = a.nrows();
    if hermitian_defect(a) > HERMITIAN_TOL {
        return Err(Error::NonPhysical("Cholesky input is not Hermitian".into()));
    }
    let eig = hermitian_eigen(a);
    let min_eig = eig.eigenvalues.min();
    if min_eig < -PSD_TOL {
        return Err(Error::NonPhysical(format!("eigenvalue {min_eig:e} < 0")));
    }
    let repaired;
    let a = if min_eig < 0.0 {
        let clipped = DVector::from_iterator(
            m,
            eig.eigenvalues.iter().map(|&l| Complex64::new(l.max(0.0), 0.0)),
        );
        let u = &eig.eigenvectors;
        repaired = u * CMatrix::from_diagonal(&clipped) * u.adjoint();
        &repaired
    } else {
        a
    };

    let mut l = CMatrix::zeros(m, m);
    let scale = (0..m).map(|i| a[(i, i)].re).fold(0.0, f64::max);
    for j in 0..m {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        // pivots at rounding level belong to the numerical null space
        let tol = 64.0 * f64::EPSILON * a[(j, j)].re.max(f64::EPSILON * scale);
        if d <= tol {
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = Complex64::new(ljj, 0.0);
        for i in j + 1..m {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(CholeskyFactor { data: l })
}

/// `L L† / Tr(L L†)`.
pub fn density_from_cholesky(l: &CholeskyFactor) -> Result<FockDensityMatrix> {
    let prod = l.matrix() * l.matrix().adjoint();
    let tr = prod.trace().re;
    if !(tr > 0.0 && tr.is_finite()) {
        return Err(Error::NonPhysical(format!("L L† has trace {tr}")));
    }
    Ok(FockDensityMatrix::from_trusted(prod))
}
