//! Sequence construction, rebalancing, training, evaluation and aggregation.

mod ablation;
mod data;
mod metrics;
mod pipeline;
mod report;
mod sequences;
mod train;

pub use ablation::{ablation_suite, Variant};
pub use data::{read_token_set, write_token_set, Corpus, FoldSpec, TokenSet};
pub use metrics::{aggregate, mean_std, AggregateReport, MetricsReport, Summary};
pub use pipeline::{cache_hashes, list_recordings, load_recordings, preprocess};
pub use report::{aggregate_table, class_names, enriched_means, hash_file, matrix_csv, write_manifest, Manifest};
pub use sequences::{build_sequences, oversample, target_range, SequenceItem, Targets};
pub use train::{
    cross_validate, evaluate, evaluate_checkpoint, run_fold, train, Adam, CrossValidation, FoldResult, PassLog,
    TrainConfig, TrainOutcome,
};

use thiserror::Error;

use crate::model::ModelError;
use crate::signal::SignalError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("recording {id} has {epochs} epochs, a sequence needs {needed}")]
    RecordingTooShort { id: String, epochs: usize, needed: usize },
    #[error("class {0} has no items to oversample")]
    MissingClass(usize),
    #[error("label {label} is out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid fold: {0}")]
    InvalidFold(String),
    #[error("unknown recording {0}")]
    UnknownRecording(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model and data disagree: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("manifest serialization failed: {0}")]
    Toml(#[from] toml::ser::Error),
}

#[cfg(test)]
mod tests;
