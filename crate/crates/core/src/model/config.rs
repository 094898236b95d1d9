use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::tokenization::{is_triangular, triangular_dim};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MhaKind {
    /// Structure-preserving attention: no value or output projection.
    Sp,
    /// Standard multihead attention with value projections, concatenation and output projection.
    Classic,
}

/// How per-head attention maps are combined in SP-MHA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HeadCombination {
    Mean,
    /// Softmax-normalized learnable weights.
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// `L = 2ℓ + 1` epochs per input sequence.
    pub seq_len: usize,
    /// Feature tokens per epoch (`t`).
    pub feature_tokens: usize,
    /// Matrix dimension of the input tokens (`m`, so tokens have length `d(m)`).
    pub input_dim: usize,
    /// Matrix dimension after the input map (`p`, tokens of length `d(p)`).
    pub model_dim: usize,
    pub heads: usize,
    /// Hidden length of the feed-forward block; must be triangular.
    pub ff_dim: usize,
    pub n_layers_intra: usize,
    pub n_layers_inter: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub classes: usize,
    pub mha_kind: MhaKind,
    pub head_combination: HeadCombination,
    /// Tokens per epoch entering the intra-epoch encoder (`C·S`).
    pub epoch_tokens: usize,
    /// Apply a second learned positional table before the inter-epoch encoder.
    pub inter_positional: bool,
    /// Hidden sizes of the two Linear+ layers; derived from `d(p)` when absent.
    pub head_hidden: Option<[usize; 2]>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            seq_len: 21,
            feature_tokens: 7,
            input_dim: 9,
            model_dim: 26,
            heads: 3,
            ff_dim: 351,
            n_layers_intra: 2,
            n_layers_inter: 2,
            dropout: 0.1,
            label_smoothing: 0.1,
            classes: 5,
            mha_kind: MhaKind::Sp,
            head_combination: HeadCombination::Mean,
            epoch_tokens: 210,
            inter_positional: true,
            head_hidden: None,
        }
    }
}

/// Triangular number closest to `x` (the smaller one on ties).
pub fn nearest_triangular(x: f64) -> usize {
    let mut best = 1;
    let mut m = 1;
    while triangular_dim(m) as f64 <= 2.0 * x + 1.0 {
        let t = triangular_dim(m);
        if (t as f64 - x).abs() < (best as f64 - x).abs() {
            best = t;
        }
        m += 1;
    }
    best
}

impl ModelConfig {
    /// Small configuration used by gradient checks and smoke tests.
    pub fn tiny() -> Self {
        ModelConfig {
            seq_len: 3,
            feature_tokens: 3,
            input_dim: 3,
            model_dim: 3,
            heads: 1,
            ff_dim: 6,
            n_layers_intra: 1,
            n_layers_inter: 1,
            dropout: 0.0,
            label_smoothing: 0.1,
            classes: 5,
            epoch_tokens: 21,
            ..ModelConfig::default()
        }
    }

    /// `ℓ`
    pub fn ell(&self) -> usize {
        self.seq_len / 2
    }

    /// `d(p)`
    pub fn token_dim(&self) -> usize {
        triangular_dim(self.model_dim)
    }

    /// `d(m)`
    pub fn input_token_dim(&self) -> usize {
        triangular_dim(self.input_dim)
    }

    pub fn head_dim(&self) -> usize {
        self.token_dim() / self.heads.max(1)
    }

    pub fn head_sizes(&self) -> [usize; 2] {
        self.head_hidden.unwrap_or_else(|| {
            let d = self.token_dim();
            [d, nearest_triangular(d as f64 / 2.0)]
        })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.seq_len == 0 || self.seq_len.is_multiple_of(2) {
            return bad(format!("seq_len must be odd, got {}", self.seq_len));
        }
        if self.model_dim == 0 || self.input_dim == 0 {
            return bad("matrix dimensions must be positive".into());
        }
        if self.heads == 0 || !self.token_dim().is_multiple_of(self.heads) {
            return bad(format!("d(p) = {} is not divisible by h = {}", self.token_dim(), self.heads));
        }
        if self.feature_tokens == 0 || !self.epoch_tokens.is_multiple_of(self.feature_tokens) {
            return Err(ModelError::TDoesNotDivide {
                t: self.feature_tokens,
                tokens: self.epoch_tokens,
            });
        }
        if !is_triangular(self.ff_dim) {
            return bad(format!("ff_dim = {} is not triangular", self.ff_dim));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing must lie in [0, 1), got {}", self.label_smoothing));
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.head_sizes().contains(&0) {
            return bad("Linear+ hidden sizes must be positive".into());
        }
        Ok(())
    }
}
