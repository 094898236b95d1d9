//! From raw multichannel recordings to per-epoch grids of covariance matrices,
//! enriched tokens and on-disk token caches.

mod cache;
mod features;
mod filter;
mod grid;
mod recording;
mod synth;

pub use cache::{cache_read, cache_write, CacheHeader, TokenCache, CACHE_MAGIC, CACHE_VERSION};
pub use features::{avg_psd, segment_covariance, zscore, PsdEstimator, COVARIANCE_JITTER};
pub use filter::{apply_filter, design_bandpass, BandpassFilter, Biquad, BUTTERWORTH_ORDER};
pub use grid::{
    build_epoch_grid, tokenize_recording, EpochGrid, FilterBank, FilteredRecording,
    RecordingTokens, SEGMENTS_PER_EPOCH, STANDARD_BANDS,
};
pub use recording::{Recording, EPOCH_SECONDS, NUM_STAGES, STAGE_NAMES};
pub use synth::{centroid_oracle_accuracy, generate_synthetic_dataset, SyntheticSpec};

use thiserror::Error;

use crate::enrichment::EnrichmentError;
use crate::spd::SpdError;
use crate::tokenization::TokenError;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("invalid band [{low}, {high}] Hz at fs = {fs} Hz")]
    InvalidBand { low: f64, high: f64, fs: f64 },
    #[error("signal has (near) zero standard deviation")]
    DegenerateSignal,
    #[error("segment covariance has (near) zero trace")]
    DegenerateSegment,
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("epoch index {index} out of range ({epochs} epochs)")]
    EpochOutOfRange { index: usize, epochs: usize },
    #[error("invalid synthetic dataset spec: {0}")]
    InvalidSpec(String),
    #[error("corrupt token cache: {0}")]
    CorruptCache(String),
    #[error("token cache version {found}, expected {expected}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Enrichment(#[from] EnrichmentError),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error(transparent)]
    Spd(#[from] SpdError),
}
