//! Reverse-mode derivative of the matrix logarithm.

use nalgebra::DMatrix;

use super::{spd_eig, symmetrize_in_place, SpdError, SpdMatrix, SymMatrix};

/// Relative eigenvalue gap under which the divided difference switches to its
/// Taylor expansion.
pub const DEGENERACY_GAP: f64 = 1e-6;

/// First divided difference of `ln` at `(a, b)`.
///
/// For `|a − b| < DEGENERACY_GAP · max(a, b)` the quotient is replaced by its
/// second-order expansion about the midpoint `μ`:
/// `1/μ + δ²/(3μ³)` with `δ = (a − b)/2`.
pub fn log_divided_difference(a: f64, b: f64) -> f64 {
    let gap = (a - b).abs();
    if gap < DEGENERACY_GAP * a.max(b) {
        let mu = 0.5 * (a + b);
        let delta = 0.5 * (a - b);
        1.0 / mu + delta * delta / (3.0 * mu * mu * mu)
    } else {
        (a.ln() - b.ln()) / (a - b)
    }
}

/// Cotangent of `matrix_log` at `x` applied to `upstream`:
/// `U · (F ∘ (Uᵀ Ḡ U)) · Uᵀ` with `F` the Loewner matrix of divided differences.
pub fn matrix_log_vjp(x: &SpdMatrix, upstream: &SymMatrix) -> Result<SymMatrix, SpdError> {
    let n = x.dim();
    if upstream.dim() != n {
        return Err(SpdError::DimensionMismatch {
            expected: n,
            found: upstream.dim(),
        });
    }
    let eig = spd_eig(x)?;
    let u = &eig.eigenvectors;
    let lambda = &eig.eigenvalues;
    let mut inner: DMatrix<f64> = u.transpose() * upstream.as_matrix() * u;
    for i in 0..n {
        for j in 0..n {
            inner[(i, j)] *= log_divided_difference(lambda[i], lambda[j]);
        }
    }
    let mut out = u * inner * u.transpose();
    symmetrize_in_place(&mut out);
    Ok(SymMatrix::from_symmetric_unchecked(out))
}
