//! Symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Jacobi is slow for large matrices but the matrices handled here are small
//! (a handful of EEG signals plus augmentation rows), and it delivers
//! eigenvalues with high relative accuracy, which the log-derivative needs
//! near degenerate spectra.

use nalgebra::{DMatrix, DVector};

use super::{SpdError, SymMatrix};

const MAX_SWEEPS: usize = 64;

/// Eigenvalues in descending order and matching orthonormal eigenvectors (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `U · diag(f(λ)) · Uᵀ`
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.dim();
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for j in 0..n {
            let s = f(self.eigenvalues[j]);
            scaled.column_mut(j).scale_mut(s);
        }
        let mut out = &scaled * u.transpose();
        symmetrize_in_place(&mut out);
        out
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }
}

pub(crate) fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Eigendecomposition of a symmetric matrix.
///
/// Eigenvalues are sorted descending; each eigenvector is signed so that its
/// first component of non-negligible magnitude is positive.
pub fn eig_sym(s: &SymMatrix) -> Result<EigenDecomposition, SpdError> {
    let a = s.as_matrix();
    let n = a.nrows();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(SpdError::NonFinite);
    }
    let mut a = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);

    let scale = a.norm();
    if scale == 0.0 {
        return Ok(finish(a, v));
    }
    let tol = f64::EPSILON * scale;

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off <= tol {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                rotate(&mut a, &mut v, p, q, c, sn, t);
            }
        }
    }
    if !converged {
        let off = off_diagonal_norm(&a);
        if off > tol * 1e3 {
            return Err(SpdError::NonConvergence {
                iterations: MAX_SWEEPS,
                residual: off,
            });
        }
    }
    Ok(finish(a, v))
}

fn rotate(a: &mut DMatrix<f64>, v: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64, t: f64) {
    let n = a.nrows();
    let apq = a[(p, q)];
    a[(p, p)] -= t * apq;
    a[(q, q)] += t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        let nkp = c * akp - s * akq;
        let nkq = s * akp + c * akq;
        a[(k, p)] = nkp;
        a[(p, k)] = nkp;
        a[(k, q)] = nkq;
        a[(q, k)] = nkq;
    }
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
    }
    acc.sqrt()
}

fn finish(a: DMatrix<f64>, v: DMatrix<f64>) -> EigenDecomposition {
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));

    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut eigenvectors = DMatrix::<f64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src).clone_owned();
        let pivot = col.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(1.0);
        if pivot < 0.0 {
            col.neg_mut();
        }
        eigenvectors.set_column(dst, &col);
    }
    EigenDecomposition {
        eigenvalues,
        eigenvectors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sym(rows: usize, data: &[f64]) -> SymMatrix {
        SymMatrix::new(DMatrix::from_row_slice(rows, rows, data)).unwrap()
    }

    #[test]
    fn identity_is_its_own_decomposition() {
        let e = eig_sym(&sym(2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(e.eigenvalues.as_slice(), &[1.0, 1.0]);
        assert_eq!(e.eigenvectors, DMatrix::identity(2, 2));
    }

    #[test]
    fn two_by_two_hand_solution() {
        let e = eig_sym(&sym(2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        assert_abs_diff_eq!(e.eigenvalues[0], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.eigenvalues[1], 1.0, epsilon = 1e-14);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(e.eigenvectors[(0, 0)], r, epsilon = 1e-14);
        assert_abs_diff_eq!(e.eigenvectors[(1, 0)], r, epsilon = 1e-14);
        assert_abs_diff_eq!(e.eigenvectors[(0, 1)], r, epsilon = 1e-14);
        assert_abs_diff_eq!(e.eigenvectors[(1, 1)], -r, epsilon = 1e-14);
    }

    #[test]
    fn diagonal_input_is_sorted_not_rotated() {
        let e = eig_sym(&sym(3, &[5.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(e.eigenvalues.as_slice(), &[5.0, 2.0, 1.0]);
        assert_eq!(e.eigenvectors, DMatrix::identity(3, 3));

        let e = eig_sym(&sym(3, &[1.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 2.0])).unwrap();
        assert_eq!(e.eigenvalues.as_slice(), &[5.0, 2.0, 1.0]);
        assert_eq!(e.eigenvectors.column(0).as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn non_finite_input_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[f64::NAN, 0.0, 0.0, 1.0]);
        assert!(SymMatrix::new(m).is_err());
    }
}
