//! Small symmetric-matrix helpers shared by the filters.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry check on covariance / information matrices.
pub const SYMMETRY_TOL: f64 = 1e-9;

pub fn is_symmetric(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return false;
            }
        }
    }
    true
}

/// Cholesky factor of a symmetric positive definite matrix, with symmetry checked first.
pub fn spd_factor(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if !m.iter().all(|v| v.is_finite()) || !is_symmetric(m) {
        return Err(Error::NotPositiveDefinite { what });
    }
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite { what })
}

pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(spd_factor(m, what)?.inverse()))
}

pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

pub fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    Ok(spd_factor(m, what)?.solve(rhs))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}
