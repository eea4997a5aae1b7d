//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Scaled Gram matrix `XᵀX / n`.
pub fn scaled_gram(design: &DMatrix<f64>) -> DMatrix<f64> {
    let n = design.nrows() as f64;
    design.tr_mul(design) / n
}

/// `Xᵀy / n`.
pub fn scaled_cross(design: &DMatrix<f64>, response: &DVector<f64>) -> DVector<f64> {
    let n = design.nrows() as f64;
    design.tr_mul(response) / n
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn extreme_eigenvalues(sym: &DMatrix<f64>) -> (f64, f64) {
    if sym.is_empty() {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(sym.clone());
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    (min, max)
}

/// Solve `gram · w = rhs` for a symmetric positive-definite `gram`.
///
/// Fails with `SingularGram` when the smallest eigenvalue is at or below
/// `eig_floor`; no ridge fallback is attempted.
pub fn solve_spd(gram: &DMatrix<f64>, rhs: &DVector<f64>, eig_floor: f64) -> Result<DVector<f64>> {
    let (min_eigenvalue, _) = extreme_eigenvalues(gram);
    if !(min_eigenvalue > eig_floor) {
        return Err(Error::SingularGram { min_eigenvalue });
    }
    let chol = gram
        .clone()
        .cholesky()
        .ok_or(Error::SingularGram { min_eigenvalue })?;
    Ok(chol.solve(rhs))
}

/// Inverse of a symmetric positive-definite matrix, same floor semantics as [`solve_spd`].
pub fn inverse_spd(gram: &DMatrix<f64>, eig_floor: f64) -> Result<DMatrix<f64>> {
    let (min_eigenvalue, _) = extreme_eigenvalues(gram);
    if !(min_eigenvalue > eig_floor) {
        return Err(Error::SingularGram { min_eigenvalue });
    }
    gram.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::SingularGram { min_eigenvalue })
}

/// A square root `L` with `L Lᵀ = sym` for a symmetric positive semidefinite
/// matrix. Negative eigenvalues from roundoff are clamped to zero.
pub fn psd_sqrt(sym: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(sym.clone());
    let scales = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let mut root = eig.eigenvectors;
    for (j, s) in scales.iter().enumerate() {
        root.column_mut(j).scale_mut(*s);
    }
    root
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}
