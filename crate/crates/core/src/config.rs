//! Run configuration: one TOML document with a fixed schema.
//!
//! ```toml
//! schema_version = 1
//!
//! [paths]
//! recordings = "data/recordings"
//! caches = "data/caches"
//! output = "runs/base"
//!
//! [enrichment]
//! strategy = "MAW"
//! feature_source = "AVG_PSD"
//!
//! [model]
//! seq_len = 5
//!
//! [train]
//! learning_rate = 1e-3
//!
//! [[folds]]
//! train = ["synth-000", "synth-001"]
//! validation = ["synth-002"]
//! test = ["synth-003"]
//! ```
//!
//! Unknown keys anywhere are rejected; omitted keys take their defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enrichment::EnrichmentConfig;
use crate::harness::{FoldSpec, TrainConfig};
use crate::model::ModelConfig;
use crate::signal::SyntheticSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {found}, expected {SCHEMA_VERSION}")]
    Version { found: u32 },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Directory holding one sub-directory per recording.
    pub recordings: PathBuf,
    /// Token caches, `<id>.spdtok` plus `<id>.labels`.
    pub caches: PathBuf,
    /// Checkpoints, metrics and manifests.
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            recordings: "data/recordings".into(),
            caches: "data/caches".into(),
            output: "runs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub paths: Paths,
    /// Generator settings, used by `synth` when no flags override them.
    #[serde(default)]
    pub synthetic: SyntheticSpec,
    #[serde(default)]
    pub enrichment: EnrichmentConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub folds: Vec<FoldSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            paths: Paths::default(),
            synthetic: SyntheticSpec::default(),
            enrichment: EnrichmentConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            folds: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Desk-scale setup for the default synthetic corpus: a one-layer model
    /// with `L = 5`, `d(p) = 21`, three heads and three feature tokens, and
    /// rotating folds over the generated recordings.
    pub fn desk() -> Self {
        let synthetic = SyntheticSpec::default();
        let enrichment = EnrichmentConfig::default();
        let model = ModelConfig {
            seq_len: 5,
            feature_tokens: 3,
            input_dim: synthetic.n_signals + enrichment.k,
            model_dim: 6,
            heads: 3,
            ff_dim: 21,
            n_layers_intra: 1,
            n_layers_inter: 1,
            classes: synthetic.classes,
            epoch_tokens: 210,
            ..ModelConfig::default()
        };
        let train = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            max_passes: 4,
            patience: 2,
            seed: 1,
            ..TrainConfig::default()
        };
        let ids: Vec<String> = (0..synthetic.recordings).map(|i| format!("synth-{i:03}")).collect();
        let folds = FoldSpec::rotating(&ids, 1, 1).expect("default corpus has six recordings");
        RunConfig {
            schema_version: SCHEMA_VERSION,
            paths: Paths::default(),
            synthetic,
            enrichment,
            model,
            train,
            folds,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// The configuration with every default written out.
    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("run configuration is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Version {
                found: self.schema_version,
            });
        }
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.synthetic.validate().map_err(|e| invalid(&e))?;
        self.enrichment.validate().map_err(|e| invalid(&e))?;
        self.model.validate().map_err(|e| invalid(&e))?;
        self.train.validate(self.model.ell()).map_err(|e| invalid(&e))?;
        for (i, fold) in self.folds.iter().enumerate() {
            fold.validate().map_err(|e| ConfigError::Invalid(format!("fold {i}: {e}")))?;
        }
        Ok(())
    }
}
