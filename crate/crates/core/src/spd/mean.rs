use nalgebra::DMatrix;

use super::{
    congruence, matrix_exp, matrix_log, recenter, sqrt_and_inv_sqrt, SpdError, SpdMatrix,
    SymMatrix,
};

pub const KARCHER_MAX_ITERATIONS: usize = 60;

/// Per-matrix residual targets: iterate down to `STEP`, accept anything under `ACCEPT`.
const KARCHER_STEP_TOL: f64 = 1e-12;
const KARCHER_ACCEPT_TOL: f64 = 1e-8;
const KARCHER_MAX_STEP: f64 = 8.0;

/// Elementwise arithmetic mean of equally shaped matrices.
pub fn euclidean_mean(mats: &[DMatrix<f64>]) -> Result<DMatrix<f64>, SpdError> {
    let first = mats.first().ok_or(SpdError::EmptyInput)?;
    let (r, c) = first.shape();
    let mut acc = DMatrix::<f64>::zeros(r, c);
    for m in mats {
        if m.shape() != (r, c) {
            return Err(SpdError::DimensionMismatch {
                expected: r * c,
                found: m.nrows() * m.ncols(),
            });
        }
        acc += m;
    }
    Ok(acc / mats.len() as f64)
}

/// `‖Σᵢ log(G^{-1/2} Xᵢ G^{-1/2})‖_F`, the first-order optimality residual of
/// the affine-invariant mean at `g`.
pub fn karcher_residual(xs: &[SpdMatrix], g: &SpdMatrix) -> Result<f64, SpdError> {
    Ok(tangent_sum(xs, g)?.0.norm())
}

fn tangent_sum(xs: &[SpdMatrix], g: &SpdMatrix) -> Result<(DMatrix<f64>, SpdMatrix), SpdError> {
    let n = g.dim();
    let (g_sqrt, g_inv_sqrt) = sqrt_and_inv_sqrt(g)?;
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for x in xs {
        acc += matrix_log(&recenter(x, &g_inv_sqrt)?)?.into_matrix();
    }
    Ok((acc, g_sqrt))
}

/// Affine-invariant (Karcher) mean by fixed-point iteration
/// `G ← G^{1/2} · exp(τ · mean log(G^{-1/2} Xᵢ G^{-1/2})) · G^{1/2}`,
/// started at the Euclidean mean.
///
/// The step `τ` starts at 1. It is halved whenever a step would increase the
/// residual and grows by half (up to 8) after a step that removes less than
/// half of it.
pub fn affine_invariant_mean(xs: &[SpdMatrix]) -> Result<SpdMatrix, SpdError> {
    let first = xs.first().ok_or(SpdError::EmptyInput)?;
    let n = first.dim();
    for x in xs {
        if x.dim() != n {
            return Err(SpdError::DimensionMismatch {
                expected: n,
                found: x.dim(),
            });
        }
    }
    if xs.len() == 1 {
        return Ok(first.clone());
    }
    let count = xs.len() as f64;
    let init: Vec<DMatrix<f64>> = xs.iter().map(|x| x.as_matrix().clone()).collect();
    let mut g = SpdMatrix::new(euclidean_mean(&init)?)?;
    let (mut sum, mut g_sqrt) = tangent_sum(xs, &g)?;
    let mut residual = sum.norm();
    let mut previous = f64::INFINITY;
    let mut tau = 1.0;

    for _ in 0..KARCHER_MAX_ITERATIONS {
        if residual <= KARCHER_STEP_TOL * count {
            return Ok(g);
        }
        // stagnation at rounding level
        if residual <= 1e-2 * KARCHER_ACCEPT_TOL * count && residual > 0.5 * previous {
            return Ok(g);
        }
        let step = matrix_exp(&SymMatrix::new(&sum * (tau / count))?)?;
        let next = congruence(g_sqrt.as_matrix(), step.as_matrix());
        let candidate = SpdMatrix::try_from_sym(SymMatrix::from_symmetric_unchecked(next))?;
        let (next_sum, next_sqrt) = tangent_sum(xs, &candidate)?;
        let next_residual = next_sum.norm();
        if next_residual > residual {
            tau *= 0.5;
            continue;
        }
        if next_residual > 0.5 * residual {
            tau = (tau * 1.5).min(KARCHER_MAX_STEP);
        }
        previous = residual;
        g = candidate;
        sum = next_sum;
        g_sqrt = next_sqrt;
        residual = next_residual;
    }
    if residual <= KARCHER_ACCEPT_TOL * count {
        return Ok(g);
    }
    Err(SpdError::NonConvergence {
        iterations: KARCHER_MAX_ITERATIONS,
        residual,
    })
}
