//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{DipError, Result};

const MAX_SWEEPS: usize = 10_000;

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(h: &DMatrix<f64>) -> Result<Vec<f64>> {
    let dim = h.nrows();
    if dim != h.ncols() {
        return Err(DipError::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(DipError::Eigen {
            dim,
            detail: "matrix has non-finite entries".into(),
        });
    }
    let eig = SymmetricEigen::try_new(h.clone(), f64::EPSILON, MAX_SWEEPS).ok_or_else(|| {
        DipError::Eigen {
            dim,
            detail: format!(
                "no convergence after {MAX_SWEEPS} iterations (trace {:e}, max |h_ij| {:e})",
                h.trace(),
                h.amax()
            ),
        }
    })?;
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

/// `(λ_min, λ_max)` of a symmetric matrix.
pub fn symmetric_extremes(h: &DMatrix<f64>) -> Result<(f64, f64)> {
    let vals = symmetric_eigenvalues(h)?;
    Ok((vals[0], vals[vals.len() - 1]))
}

/// Spectral norm of `M` from the eigenvalues of `M Mᵀ` (short-and-wide `M`).
pub fn spectral_norm_wide(m: &DMatrix<f64>) -> Result<f64> {
    let gram = m * m.transpose();
    let (_, hi) = symmetric_extremes(&gram)?;
    Ok(hi.max(0.0).sqrt())
}
