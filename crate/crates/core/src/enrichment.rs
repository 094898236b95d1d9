//! Matrix augmentation and per-recording whitening.
//!
//! A covariance matrix `X ∈ SPD(n)` is augmented with a feature matrix
//! `A ∈ ℝ^{n×k}` into
//!
//! ```text
//! ⎡ X + α²AAᵀ   αA  ⎤
//! ⎣   αAᵀ       I_k ⎦  ∈ SPD(n + k)
//! ```
//!
//! and whitened by a per-(recording, channel) matrix `G` as `G^{-1/2} X G^{-1/2}`.
//! The whitening matrix is built under one of four strategies, see [`Strategy`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spd::{
    affine_invariant_mean, congruence, euclidean_mean, sqrt_and_inv_sqrt, SpdError, SpdMatrix,
    SymMatrix,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnrichmentError {
    #[error(transparent)]
    Spd(#[from] SpdError),
    #[error("augmentation matrix has {rows} rows, covariance has dimension {dim}")]
    AugmentationRows { rows: usize, dim: usize },
    #[error("{matrices} covariance matrices but {features} feature matrices")]
    Misaligned { matrices: usize, features: usize },
    #[error("invalid enrichment config: {0}")]
    InvalidConfig(String),
}

/// How the per-recording whitening matrix is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    /// Direct average whitening: affine-invariant mean of the augmented matrices.
    Daw,
    /// Mirrored augmentation whitening: augment the affine-invariant mean of the
    /// covariances with the Euclidean mean of the features.
    Maw,
    /// Whitening prior to augmentation.
    Wpa,
    /// Like `Wpa` but whitening by the Euclidean mean (the recording's global covariance).
    GlobalCov,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Daw, Strategy::Maw, Strategy::Wpa, Strategy::GlobalCov];

    /// Numeric tag stored in token cache headers.
    pub fn tag(self) -> u32 {
        match self {
            Strategy::Daw => 0,
            Strategy::Maw => 1,
            Strategy::Wpa => 2,
            Strategy::GlobalCov => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Daw => "DAW",
            Strategy::Maw => "MAW",
            Strategy::Wpa => "WPA",
            Strategy::GlobalCov => "GLOBAL_COV",
        }
    }

    /// Whether whitening happens after augmentation (`G` has dimension `n + k`).
    pub fn augments_first(self) -> bool {
        matches!(self, Strategy::Daw | Strategy::Maw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeatureSource {
    /// Average power spectral density of each signal segment (`k = 1`).
    AvgPsd,
    /// Zero-valued features.
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnrichmentConfig {
    pub strategy: Strategy,
    pub alpha: f64,
    pub feature_source: FeatureSource,
    pub k: usize,
}

impl Default for EnrichmentConfig {
    fn default() -> Self {
        EnrichmentConfig {
            strategy: Strategy::Maw,
            alpha: 1.0,
            feature_source: FeatureSource::AvgPsd,
            k: 1,
        }
    }
}

impl EnrichmentConfig {
    pub fn validate(&self) -> Result<(), EnrichmentError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(EnrichmentError::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        match self.feature_source {
            FeatureSource::AvgPsd if self.k != 1 => Err(EnrichmentError::InvalidConfig(format!(
                "AVG_PSD features require k = 1, got {}",
                self.k
            ))),
            _ => Ok(()),
        }
    }
}

/// `n × k` signal-wise feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationMatrix(DMatrix<f64>);

impl AugmentationMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self, EnrichmentError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(SpdError::NonFinite.into());
        }
        Ok(AugmentationMatrix(m))
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        AugmentationMatrix(DMatrix::zeros(n, k))
    }

    /// Single feature column.
    pub fn column(values: &[f64]) -> Result<Self, EnrichmentError> {
        Self::new(DMatrix::from_column_slice(values.len(), 1, values))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn k(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        AugmentationMatrix(&self.0 * s)
    }
}

/// Block augmentation `[[X + α²AAᵀ, αA], [αAᵀ, I_k]]`.
pub fn augment(
    x: &SpdMatrix,
    a: &AugmentationMatrix,
    alpha: f64,
) -> Result<SpdMatrix, EnrichmentError> {
    let n = x.dim();
    if a.rows() != n {
        return Err(EnrichmentError::AugmentationRows { rows: a.rows(), dim: n });
    }
    let k = a.k();
    let scaled = a.as_matrix() * alpha;
    let mut out = DMatrix::<f64>::identity(n + k, n + k);
    let top_left = x.as_matrix() + &scaled * scaled.transpose();
    out.view_mut((0, 0), (n, n)).copy_from(&top_left);
    out.view_mut((0, n), (n, k)).copy_from(&scaled);
    out.view_mut((n, 0), (k, n)).copy_from(&scaled.transpose());
    Ok(SpdMatrix::new(out)?)
}

/// `G^{-1/2} · X · G^{-1/2}`
pub fn whiten(x: &SpdMatrix, g: &SpdMatrix) -> Result<SpdMatrix, EnrichmentError> {
    let (_, g_inv_sqrt) = sqrt_and_inv_sqrt(g)?;
    whiten_with(x, &g_inv_sqrt)
}

fn whiten_with(x: &SpdMatrix, g_inv_sqrt: &SpdMatrix) -> Result<SpdMatrix, EnrichmentError> {
    if x.dim() != g_inv_sqrt.dim() {
        return Err(SpdError::DimensionMismatch {
            expected: g_inv_sqrt.dim(),
            found: x.dim(),
        }
        .into());
    }
    let m = congruence(g_inv_sqrt.as_matrix(), x.as_matrix());
    Ok(SpdMatrix::try_from_sym(SymMatrix::new(m)?)?)
}

fn check_aligned(xs: &[SpdMatrix], as_: &[AugmentationMatrix]) -> Result<(), EnrichmentError> {
    if xs.len() != as_.len() {
        return Err(EnrichmentError::Misaligned {
            matrices: xs.len(),
            features: as_.len(),
        });
    }
    if xs.is_empty() {
        return Err(SpdError::EmptyInput.into());
    }
    Ok(())
}

/// Whitening matrix for one recording and channel.
///
/// DAW and MAW return a matrix of dimension `n + k`; WPA and GLOBAL_COV return
/// the unaugmented `n × n` mean.
pub fn whitening_matrix(
    xs: &[SpdMatrix],
    as_: &[AugmentationMatrix],
    cfg: &EnrichmentConfig,
) -> Result<SpdMatrix, EnrichmentError> {
    check_aligned(xs, as_)?;
    match cfg.strategy {
        Strategy::Daw => {
            let augmented = xs
                .iter()
                .zip(as_)
                .map(|(x, a)| augment(x, a, cfg.alpha))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(affine_invariant_mean(&augmented)?)
        }
        Strategy::Maw => {
            let g = affine_invariant_mean(xs)?;
            let feats: Vec<DMatrix<f64>> = as_.iter().map(|a| a.as_matrix().clone()).collect();
            let a_mean = AugmentationMatrix::new(euclidean_mean(&feats)?)?;
            augment(&g, &a_mean, cfg.alpha)
        }
        Strategy::Wpa => Ok(affine_invariant_mean(xs)?),
        Strategy::GlobalCov => {
            let mats: Vec<DMatrix<f64>> = xs.iter().map(|x| x.as_matrix().clone()).collect();
            Ok(SpdMatrix::new(euclidean_mean(&mats)?)?)
        }
    }
}

/// Augments and whitens every matrix of one recording and channel, preserving order.
pub fn enrich_recording_channel(
    xs: &[SpdMatrix],
    as_: &[AugmentationMatrix],
    cfg: &EnrichmentConfig,
) -> Result<Vec<SpdMatrix>, EnrichmentError> {
    cfg.validate()?;
    let g = whitening_matrix(xs, as_, cfg)?;
    let (_, g_inv_sqrt) = sqrt_and_inv_sqrt(&g)?;
    xs.iter()
        .zip(as_)
        .map(|(x, a)| {
            if cfg.strategy.augments_first() {
                whiten_with(&augment(x, a, cfg.alpha)?, &g_inv_sqrt)
            } else {
                augment(&whiten_with(x, &g_inv_sqrt)?, a, cfg.alpha)
            }
        })
        .collect()
}
