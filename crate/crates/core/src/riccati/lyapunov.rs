use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

/// Solves `F X Fᵀ − X + W = 0` for Schur-stable `F` through the vectorized
/// system `(I − F ⊗ F) vec(X) = vec(W)`.
pub fn solve_discrete_lyapunov(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    if !f.is_square() || w.shape() != (n, n) {
        return Err(Error::dims(
            "discrete Lyapunov equation",
            format!("square F and {n}x{n} W"),
            format!("F {}x{}, W {}x{}", f.nrows(), f.ncols(), w.nrows(), w.ncols()),
        ));
    }
    let spectral_radius = linalg::spectral_radius(f);
    if spectral_radius >= 1.0 {
        return Err(Error::NotSchurStable { spectral_radius });
    }
    let lhs = DMatrix::identity(n * n, n * n) - f.kronecker(f);
    let rhs = nalgebra::DVector::from_column_slice(w.as_slice());
    let x = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("Lyapunov system is singular".into()))?;
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    if linalg::symmetry_residual(w) == 0.0 {
        Ok(linalg::symmetrize(&x))
    } else {
        Ok(x)
    }
}
