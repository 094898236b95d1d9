//! Linear algebra and LogEuclidean geometry on symmetric and SPD matrices.
//!
//! Everything here is a pure function of its inputs. Matrices are dense
//! `nalgebra::DMatrix<f64>` wrapped in [`SymMatrix`] (the tangent space) and
//! [`SpdMatrix`] (the manifold).

mod eigen;
mod grad;
mod mean;

use nalgebra::DMatrix;
use thiserror::Error;

pub use eigen::{eig_sym, EigenDecomposition};
pub use grad::{log_divided_difference, matrix_log_vjp};
pub use mean::{affine_invariant_mean, euclidean_mean, karcher_residual, KARCHER_MAX_ITERATIONS};

pub(crate) use eigen::symmetrize_in_place;

/// Relative eigenvalue floor: an SPD matrix must have `λ_min > SPD_EPS · max(λ_max, 1)`.
pub const SPD_EPS: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpdError {
    #[error("matrix is not SPD: smallest eigenvalue {min_eigenvalue:e} <= threshold {threshold:e}")]
    NotSpd { min_eigenvalue: f64, threshold: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("matrix exponential out of range (eigenvalue {eigenvalue})")]
    Overflow { eigenvalue: f64 },
    #[error("empty input")]
    EmptyInput,
    #[error("{0} weights supplied for {1} matrices")]
    WeightCount(usize, usize),
}

/// Dense symmetric matrix. The constructor symmetrizes via `(S + Sᵀ)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self, SpdError> {
        if !m.is_square() {
            return Err(SpdError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(SpdError::NonFinite);
        }
        let mut m = m;
        symmetrize_in_place(&mut m);
        Ok(SymMatrix(m))
    }

    pub fn from_row_slice(dim: usize, data: &[f64]) -> Result<Self, SpdError> {
        Self::new(DMatrix::from_row_slice(dim, dim, data))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)))
    }

    /// Caller guarantees symmetry.
    pub(crate) fn from_symmetric_unchecked(m: DMatrix<f64>) -> Self {
        debug_assert!(m.is_square());
        SymMatrix(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(&self.0 * s)
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix, SpdError> {
        check_dims(self.dim(), other.dim())?;
        Ok(SymMatrix(&self.0 + &other.0))
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix, SpdError> {
        check_dims(self.dim(), other.dim())?;
        Ok(SymMatrix(&self.0 - &other.0))
    }
}

/// Symmetric positive-definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Symmetrizes, then validates the eigenvalue floor.
    pub fn new(m: DMatrix<f64>) -> Result<Self, SpdError> {
        let sym = SymMatrix::new(m)?;
        Self::try_from_sym(sym)
    }

    pub fn from_row_slice(dim: usize, data: &[f64]) -> Result<Self, SpdError> {
        Self::new(DMatrix::from_row_slice(dim, dim, data))
    }

    pub fn try_from_sym(s: SymMatrix) -> Result<Self, SpdError> {
        let eig = eig_sym(&s)?;
        validate_spectrum(&eig)?;
        Ok(SpdMatrix(s.0))
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self, SpdError> {
        Self::try_from_sym(SymMatrix::from_diagonal(diag))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn as_sym(&self) -> SymMatrix {
        SymMatrix(self.0.clone())
    }

    pub fn eig(&self) -> Result<EigenDecomposition, SpdError> {
        eig_sym(&SymMatrix::from_symmetric_unchecked(self.0.clone()))
    }
}

impl From<SpdMatrix> for SymMatrix {
    fn from(x: SpdMatrix) -> Self {
        SymMatrix(x.0)
    }
}

fn check_dims(expected: usize, found: usize) -> Result<(), SpdError> {
    if expected != found {
        return Err(SpdError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Threshold `SPD_EPS · max(λ_max, 1)` below which a spectrum is rejected.
pub fn spd_threshold(max_eigenvalue: f64) -> f64 {
    SPD_EPS * max_eigenvalue.max(1.0)
}

fn validate_spectrum(eig: &EigenDecomposition) -> Result<(), SpdError> {
    let threshold = spd_threshold(eig.max_eigenvalue());
    let min_eigenvalue = eig.min_eigenvalue();
    if min_eigenvalue.is_nan() || min_eigenvalue <= threshold {
        return Err(SpdError::NotSpd {
            min_eigenvalue,
            threshold,
        });
    }
    Ok(())
}

fn spd_eig(x: &SpdMatrix) -> Result<EigenDecomposition, SpdError> {
    let eig = x.eig()?;
    validate_spectrum(&eig)?;
    Ok(eig)
}

/// `U · log(Λ) · Uᵀ`
pub fn matrix_log(x: &SpdMatrix) -> Result<SymMatrix, SpdError> {
    let eig = spd_eig(x)?;
    Ok(SymMatrix(eig.reconstruct_with(f64::ln)))
}

/// Inverse of [`matrix_log`].
///
/// Fails with `Overflow` when an eigenvalue exceeds the `exp` range, or when
/// the spectral spread is so wide that the result would fall under the SPD
/// eigenvalue floor.
pub fn matrix_exp(s: &SymMatrix) -> Result<SpdMatrix, SpdError> {
    let eig = eig_sym(s)?;
    let top = eig.max_eigenvalue();
    if top > f64::MAX.ln() {
        return Err(SpdError::Overflow { eigenvalue: top });
    }
    let bottom = eig.min_eigenvalue();
    if bottom.exp() <= spd_threshold(top.exp()) {
        return Err(SpdError::Overflow { eigenvalue: bottom });
    }
    Ok(SpdMatrix(eig.reconstruct_with(f64::exp)))
}

/// `X^a` with the eigenvectors of `X`.
pub fn matrix_power(x: &SpdMatrix, a: f64) -> Result<SpdMatrix, SpdError> {
    let eig = spd_eig(x)?;
    Ok(SpdMatrix(eig.reconstruct_with(|l| l.powf(a))))
}

/// `(X^{1/2}, X^{-1/2})` from one decomposition.
pub fn sqrt_and_inv_sqrt(x: &SpdMatrix) -> Result<(SpdMatrix, SpdMatrix), SpdError> {
    let eig = spd_eig(x)?;
    Ok((
        SpdMatrix(eig.reconstruct_with(f64::sqrt)),
        SpdMatrix(eig.reconstruct_with(|l| 1.0 / l.sqrt())),
    ))
}

/// Congruence `B · X · Bᵀ` for symmetric `B`, re-symmetrized.
pub(crate) fn congruence(b: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = b * x * b.transpose();
    symmetrize_in_place(&mut out);
    out
}

/// `P^{-1/2} · X · P^{-1/2}`, validated as SPD.
pub(crate) fn recenter(x: &SpdMatrix, p_inv_sqrt: &SpdMatrix) -> Result<SpdMatrix, SpdError> {
    check_dims(p_inv_sqrt.dim(), x.dim())?;
    SpdMatrix::try_from_sym(SymMatrix(congruence(&p_inv_sqrt.0, &x.0)))
}

/// Tangent-space projection at `P`: `P^{1/2} · log(P^{-1/2} X P^{-1/2}) · P^{1/2}`.
pub fn matrix_log_at(x: &SpdMatrix, p: &SpdMatrix) -> Result<SymMatrix, SpdError> {
    check_dims(p.dim(), x.dim())?;
    let (p_sqrt, p_inv_sqrt) = sqrt_and_inv_sqrt(p)?;
    let inner = matrix_log(&recenter(x, &p_inv_sqrt)?)?;
    Ok(SymMatrix(congruence(&p_sqrt.0, &inner.0)))
}

/// Inverse of [`matrix_log_at`]: `P^{1/2} · exp(P^{-1/2} S P^{-1/2}) · P^{1/2}`.
pub fn matrix_exp_at(s: &SymMatrix, p: &SpdMatrix) -> Result<SpdMatrix, SpdError> {
    check_dims(p.dim(), s.dim())?;
    let (p_sqrt, p_inv_sqrt) = sqrt_and_inv_sqrt(p)?;
    let inner = matrix_exp(&SymMatrix(congruence(&p_inv_sqrt.0, &s.0)))?;
    SpdMatrix::try_from_sym(SymMatrix(congruence(&p_sqrt.0, &inner.0)))
}

/// LogEuclidean distance with Frobenius norm, centred at `P`.
pub fn le_distance(x: &SpdMatrix, y: &SpdMatrix, p: &SpdMatrix) -> Result<f64, SpdError> {
    check_dims(x.dim(), y.dim())?;
    check_dims(x.dim(), p.dim())?;
    let (_, p_inv_sqrt) = sqrt_and_inv_sqrt(p)?;
    let lx = matrix_log(&recenter(x, &p_inv_sqrt)?)?;
    let ly = matrix_log(&recenter(y, &p_inv_sqrt)?)?;
    Ok((lx.0 - ly.0).norm())
}

/// Closed-form LogEuclidean weighted sum centred at `P`.
pub fn le_weighted_sum(
    xs: &[SpdMatrix],
    ws: &[f64],
    p: &SpdMatrix,
) -> Result<SpdMatrix, SpdError> {
    let first = xs.first().ok_or(SpdError::EmptyInput)?;
    if xs.len() != ws.len() {
        return Err(SpdError::WeightCount(ws.len(), xs.len()));
    }
    let n = first.dim();
    check_dims(n, p.dim())?;
    let (p_sqrt, p_inv_sqrt) = sqrt_and_inv_sqrt(p)?;
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for (x, &w) in xs.iter().zip(ws) {
        check_dims(n, x.dim())?;
        let l = matrix_log(&recenter(x, &p_inv_sqrt)?)?;
        acc += l.0 * w;
    }
    let inner = matrix_exp(&SymMatrix(acc))?;
    SpdMatrix::try_from_sym(SymMatrix(congruence(&p_sqrt.0, &inner.0)))
}
