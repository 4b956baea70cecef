//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.symmetric_eigenvalues().min()
}

/// Maximum eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.symmetric_eigenvalues().max()
}

/// Spectral norm (largest singular value) of a general matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    // sqrt of the largest eigenvalue of the (symmetric PSD) Gram matrix;
    // avoids the full SVD for the small matrices used here.
    let gram = m.transpose() * m;
    max_eigenvalue(&gram).max(0.0).sqrt()
}

/// (M + M^T) / 2.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Checks that a matrix is symmetric to `tol` and positive definite.
pub fn is_symmetric_positive_definite(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    if (m - m.transpose()).amax() > tol {
        return false;
    }
    min_eigenvalue(&symmetrize(m)) > 0.0
}

/// True when every entry is finite.
pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}
