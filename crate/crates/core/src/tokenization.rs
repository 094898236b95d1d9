//! Bijective tokenization of symmetric matrices and triangular linear maps.
//!
//! A symmetric `m × m` matrix is read as its upper triangle, row-major, with
//! off-diagonal entries scaled by `√2`. The resulting vector of length
//! `d(m) = m(m+1)/2` has Euclidean norm equal to the Frobenius norm of the
//! matrix, so LogEuclidean distances at the identity are plain vector
//! distances between tokens of matrix logarithms.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::spd::{matrix_exp, matrix_log, SpdError, SpdMatrix, SymMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TokenError {
    #[error("length {0} is not a triangular number")]
    NotTriangularLength(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("token contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Spd(#[from] SpdError),
}

/// `m(m+1)/2`
pub const fn triangular_dim(m: usize) -> usize {
    m * (m + 1) / 2
}

/// Inverse of [`triangular_dim`], if `len` is triangular.
pub fn triangular_root(len: usize) -> Option<usize> {
    let m = (((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    (m.saturating_sub(1)..=m + 1).find(|&c| triangular_dim(c) == len)
}

pub fn is_triangular(len: usize) -> bool {
    len > 0 && triangular_root(len).is_some()
}

/// Vector representation of a symmetric `m × m` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    dim_matrix: usize,
    values: Vec<f64>,
}

impl Token {
    pub fn new(values: Vec<f64>) -> Result<Self, TokenError> {
        let dim_matrix = match triangular_root(values.len()) {
            Some(m) if m > 0 => m,
            _ => return Err(TokenError::NotTriangularLength(values.len())),
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TokenError::NonFinite);
        }
        Ok(Token { dim_matrix, values })
    }

    pub fn zeros(dim_matrix: usize) -> Self {
        Token {
            dim_matrix,
            values: vec![0.0; triangular_dim(dim_matrix)],
        }
    }

    pub fn dim_matrix(&self) -> usize {
        self.dim_matrix
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `a·self + b·other`
    pub fn combine(&self, a: f64, other: &Token, b: f64) -> Result<Token, TokenError> {
        if self.len() != other.len() {
            return Err(TokenError::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Token {
            dim_matrix: self.dim_matrix,
            values,
        })
    }
}

pub fn tokenize(s: &SymMatrix) -> Token {
    let m = s.dim();
    let a = s.as_matrix();
    let mut values = Vec::with_capacity(triangular_dim(m));
    for i in 0..m {
        values.push(a[(i, i)]);
        for j in (i + 1)..m {
            values.push(a[(i, j)] * std::f64::consts::SQRT_2);
        }
    }
    Token { dim_matrix: m, values }
}

pub fn detokenize(t: &Token) -> SymMatrix {
    let m = t.dim_matrix;
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut it = t.values.iter();
    for i in 0..m {
        a[(i, i)] = *it.next().expect("token length is triangular");
        for j in (i + 1)..m {
            let v = *it.next().expect("token length is triangular") / std::f64::consts::SQRT_2;
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    SymMatrix::from_symmetric_unchecked(a)
}

/// Detokenizes a raw slice, checking that its length is triangular.
pub fn detokenize_slice(values: &[f64]) -> Result<SymMatrix, TokenError> {
    Ok(detokenize(&Token::new(values.to_vec())?))
}

/// `tokenize(log(X))`
pub fn spd_to_token(x: &SpdMatrix) -> Result<Token, TokenError> {
    Ok(tokenize(&matrix_log(x)?))
}

/// `exp(detokenize(t))`
pub fn token_to_spd(t: &Token) -> Result<SpdMatrix, TokenError> {
    Ok(matrix_exp(&detokenize(t))?)
}

/// Linear map `ℝ^{d(m)} → ℝ^{d(p)}`, `t ↦ W·t + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularMap {
    weight: DMatrix<f64>,
    bias: Option<DVector<f64>>,
}

impl TriangularMap {
    pub fn new(weight: DMatrix<f64>, bias: Option<DVector<f64>>) -> Result<Self, TokenError> {
        for len in [weight.nrows(), weight.ncols()] {
            if !is_triangular(len) {
                return Err(TokenError::NotTriangularLength(len));
            }
        }
        if let Some(b) = &bias {
            if b.len() != weight.nrows() {
                return Err(TokenError::DimensionMismatch {
                    expected: weight.nrows(),
                    found: b.len(),
                });
            }
        }
        Ok(TriangularMap { weight, bias })
    }

    pub fn identity(m: usize) -> Self {
        let d = triangular_dim(m);
        TriangularMap {
            weight: DMatrix::identity(d, d),
            bias: None,
        }
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn bias(&self) -> Option<&DVector<f64>> {
        self.bias.as_ref()
    }

    pub fn input_len(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_len(&self) -> usize {
        self.weight.nrows()
    }

    pub fn apply(&self, t: &Token) -> Result<Token, TokenError> {
        if t.len() != self.input_len() {
            return Err(TokenError::DimensionMismatch {
                expected: self.input_len(),
                found: t.len(),
            });
        }
        let mut out = &self.weight * DVector::from_column_slice(&t.values);
        if let Some(b) = &self.bias {
            out += b;
        }
        Token::new(out.as_slice().to_vec())
    }

    /// The induced map on SPD matrices: `exp ∘ L ∘ log`.
    pub fn apply_spd(&self, x: &SpdMatrix) -> Result<SpdMatrix, TokenError> {
        token_to_spd(&self.apply(&spd_to_token(x)?)?)
    }
}

/// Free-function form of [`TriangularMap::apply`].
pub fn apply_map(map: &TriangularMap, t: &Token) -> Result<Token, TokenError> {
    map.apply(t)
}
