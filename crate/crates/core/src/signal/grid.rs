use rayon::prelude::*;

use super::cache::{CacheHeader, TokenCache};
use super::features::{segment_covariance, zscore, PsdEstimator};
use super::filter::{apply_filter, design_bandpass, BandpassFilter, BUTTERWORTH_ORDER};
use super::recording::{Recording, EPOCH_SECONDS};
use super::SignalError;
use crate::enrichment::{enrich_recording_channel, AugmentationMatrix, EnrichmentConfig, FeatureSource};
use crate::spd::SpdMatrix;
use crate::tokenization::{spd_to_token, triangular_dim};

/// One-second segments per epoch.
pub const SEGMENTS_PER_EPOCH: usize = EPOCH_SECONDS;

/// Frequency bands (Hz) of the filtered channels: delta, theta, alpha, sigma, beta, gamma.
pub const STANDARD_BANDS: [(f64, f64); 6] = [
    (0.5, 4.0),
    (4.0, 8.0),
    (8.0, 12.0),
    (12.0, 22.0),
    (22.0, 30.0),
    (30.0, 45.0),
];

/// Channel 0 passes the signal through; channel `b + 1` is band `b`.
#[derive(Debug, Clone)]
pub struct FilterBank {
    bands: Vec<(f64, f64)>,
    filters: Vec<BandpassFilter>,
    fs: usize,
}

impl FilterBank {
    pub fn new(bands: &[(f64, f64)], fs: usize) -> Result<Self, SignalError> {
        let filters = bands
            .iter()
            .map(|&(lo, hi)| design_bandpass(lo, hi, fs as f64))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FilterBank {
            bands: bands.to_vec(),
            filters,
            fs,
        })
    }

    /// The standard six-band bank.
    pub fn standard(fs: usize) -> Result<Self, SignalError> {
        Self::new(&STANDARD_BANDS, fs)
    }

    pub fn bands(&self) -> &[(f64, f64)] {
        &self.bands
    }

    pub fn filters(&self) -> &[BandpassFilter] {
        &self.filters
    }

    pub fn order(&self) -> usize {
        BUTTERWORTH_ORDER
    }

    pub fn fs(&self) -> usize {
        self.fs
    }

    /// `C`, including the pass-through channel.
    pub fn channels(&self) -> usize {
        self.bands.len() + 1
    }
}

/// A z-scored recording filtered through every channel of a [`FilterBank`].
/// Filtering runs over the whole recording, so epoch boundaries carry no transients.
#[derive(Debug, Clone)]
pub struct FilteredRecording {
    fs: usize,
    epochs: usize,
    /// `[channel][signal][sample]`
    channels: Vec<Vec<Vec<f64>>>,
}

impl FilteredRecording {
    pub fn new(recording: &Recording, bank: &FilterBank) -> Result<Self, SignalError> {
        if bank.fs() != recording.fs() {
            return Err(SignalError::InvalidRecording(format!(
                "filter bank designed for {} Hz, recording sampled at {} Hz",
                bank.fs(),
                recording.fs()
            )));
        }
        let standardized = recording
            .signals()
            .iter()
            .map(|s| zscore(s))
            .collect::<Result<Vec<_>, _>>()?;
        let mut channels = Vec::with_capacity(bank.channels());
        for f in bank.filters() {
            channels.push(standardized.iter().map(|s| apply_filter(f, s)).collect());
        }
        channels.insert(0, standardized);
        Ok(FilteredRecording {
            fs: recording.fs(),
            epochs: recording.n_epochs(),
            channels,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_signals(&self) -> usize {
        self.channels[0].len()
    }

    pub fn n_epochs(&self) -> usize {
        self.epochs
    }

    pub fn channel(&self, c: usize) -> &[Vec<f64>] {
        &self.channels[c]
    }

    fn epoch_rows(&self, c: usize, e: usize) -> Vec<&[f64]> {
        let len = EPOCH_SECONDS * self.fs;
        self.channels[c].iter().map(|s| &s[e * len..(e + 1) * len]).collect()
    }

    fn channel_epoch(
        &self,
        c: usize,
        e: usize,
        cfg: &EnrichmentConfig,
        psd: &mut Option<PsdEstimator>,
    ) -> Result<(Vec<SpdMatrix>, Vec<AugmentationMatrix>), SignalError> {
        let rows = self.epoch_rows(c, e);
        let mats = segment_covariance(&rows, self.fs)?;
        let feats = (0..SEGMENTS_PER_EPOCH)
            .map(|s| match cfg.feature_source {
                FeatureSource::Zeros => Ok(AugmentationMatrix::zeros(rows.len(), cfg.k)),
                FeatureSource::AvgPsd => {
                    let est = psd.get_or_insert_with(|| PsdEstimator::new(self.fs));
                    let col: Vec<f64> = rows
                        .iter()
                        .map(|r| est.average(&r[s * self.fs..(s + 1) * self.fs], self.fs as f64))
                        .collect();
                    AugmentationMatrix::column(&col)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((mats, feats))
    }

    /// The `S × C` grid of covariance and feature matrices for epoch `e`.
    pub fn epoch_grid(&self, e: usize, cfg: &EnrichmentConfig) -> Result<EpochGrid, SignalError> {
        if e >= self.epochs {
            return Err(SignalError::EpochOutOfRange {
                index: e,
                epochs: self.epochs,
            });
        }
        let c_count = self.n_channels();
        let mut per_channel = Vec::with_capacity(c_count);
        let mut psd = None;
        for c in 0..c_count {
            per_channel.push(self.channel_epoch(c, e, cfg, &mut psd)?);
        }
        let mut matrices = Vec::with_capacity(SEGMENTS_PER_EPOCH * c_count);
        let mut features = Vec::with_capacity(SEGMENTS_PER_EPOCH * c_count);
        for s in 0..SEGMENTS_PER_EPOCH {
            for (mats, feats) in &per_channel {
                matrices.push(mats[s].clone());
                features.push(feats[s].clone());
            }
        }
        Ok(EpochGrid {
            epoch: e,
            channels: c_count,
            matrices,
            features,
        })
    }

    /// Enriched matrices of every channel, `[channel][epoch · S + segment]`.
    pub fn enrich(&self, cfg: &EnrichmentConfig) -> Result<Vec<Vec<SpdMatrix>>, SignalError> {
        cfg.validate()?;
        (0..self.n_channels())
            .into_par_iter()
            .map(|c| {
                let mut mats = Vec::with_capacity(self.epochs * SEGMENTS_PER_EPOCH);
                let mut feats = Vec::with_capacity(self.epochs * SEGMENTS_PER_EPOCH);
                let mut psd = None;
                for e in 0..self.epochs {
                    let (m, f) = self.channel_epoch(c, e, cfg, &mut psd)?;
                    mats.extend(m);
                    feats.extend(f);
                }
                Ok(enrich_recording_channel(&mats, &feats, cfg)?)
            })
            .collect()
    }
}

/// Covariance matrices and feature matrices of one epoch, indexed `(segment, channel)`.
#[derive(Debug, Clone)]
pub struct EpochGrid {
    pub epoch: usize,
    channels: usize,
    matrices: Vec<SpdMatrix>,
    features: Vec<AugmentationMatrix>,
}

impl EpochGrid {
    /// `(S, C)`
    pub fn shape(&self) -> (usize, usize) {
        (self.matrices.len() / self.channels, self.channels)
    }

    pub fn matrix(&self, segment: usize, channel: usize) -> &SpdMatrix {
        &self.matrices[segment * self.channels + channel]
    }

    pub fn feature(&self, segment: usize, channel: usize) -> &AugmentationMatrix {
        &self.features[segment * self.channels + channel]
    }

    pub fn matrices(&self) -> &[SpdMatrix] {
        &self.matrices
    }

    pub fn features(&self) -> &[AugmentationMatrix] {
        &self.features
    }
}

/// Grid of one epoch. Filtering still covers the whole recording.
pub fn build_epoch_grid(
    recording: &Recording,
    index: usize,
    bank: &FilterBank,
    cfg: &EnrichmentConfig,
) -> Result<EpochGrid, SignalError> {
    if index >= recording.n_epochs() {
        return Err(SignalError::EpochOutOfRange {
            index,
            epochs: recording.n_epochs(),
        });
    }
    FilteredRecording::new(recording, bank)?.epoch_grid(index, cfg)
}

/// Token cache of one recording together with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingTokens {
    pub id: String,
    pub labels: Vec<usize>,
    pub cache: TokenCache,
}

/// Filters, enriches and tokenizes a whole recording.
///
/// Tokens are stored epoch-major, then channel, then segment, so the `C·S`
/// tokens of one epoch form the channel-major intra-epoch sequence.
pub fn tokenize_recording(
    recording: &Recording,
    bank: &FilterBank,
    cfg: &EnrichmentConfig,
) -> Result<RecordingTokens, SignalError> {
    let filtered = FilteredRecording::new(recording, bank)?;
    let enriched = filtered.enrich(cfg)?;
    let n = recording.n_signals();
    let m = n + cfg.k;
    let d = triangular_dim(m);
    let c_count = filtered.n_channels();
    let epochs = recording.n_epochs();
    let mut tokens = vec![0f32; epochs * c_count * SEGMENTS_PER_EPOCH * d];
    for (c, mats) in enriched.iter().enumerate() {
        for (idx, x) in mats.iter().enumerate() {
            let (e, s) = (idx / SEGMENTS_PER_EPOCH, idx % SEGMENTS_PER_EPOCH);
            let t = spd_to_token(x)?;
            let at = ((e * c_count + c) * SEGMENTS_PER_EPOCH + s) * d;
            for (dst, v) in tokens[at..at + d].iter_mut().zip(t.values()) {
                *dst = *v as f32;
            }
        }
    }
    let header = CacheHeader {
        n: n as u32,
        k: cfg.k as u32,
        m: m as u32,
        p_flag: 0,
        channels: c_count as u32,
        segments: SEGMENTS_PER_EPOCH as u32,
        epochs: epochs as u32,
        strategy: cfg.strategy,
        alpha: cfg.alpha,
    };
    Ok(RecordingTokens {
        id: recording.id().to_string(),
        labels: recording.labels().to_vec(),
        cache: TokenCache::new(header, tokens)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::affine_invariant_mean;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noise_recording(epochs: usize, silent: bool) -> Recording {
        let fs = 100;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let t = EPOCH_SECONDS * fs * epochs;
        let signals = (0..3)
            .map(|_| {
                (0..t)
                    .map(|_| if silent { 0.0 } else { rng.sample::<f64, _>(StandardNormal) })
                    .collect()
            })
            .collect();
        Recording::new("noise", fs, signals, vec![0; epochs]).unwrap()
    }

    #[test]
    fn bank_matches_standard_bands() {
        let bank = FilterBank::standard(100).unwrap();
        assert_eq!(bank.channels(), 7);
        assert_eq!(bank.order(), 4);
        assert_eq!(bank.bands(), &STANDARD_BANDS);
        assert!(FilterBank::standard(90).is_err());
    }

    #[test]
    fn grid_shape_and_features() {
        let rec = noise_recording(2, false);
        let bank = FilterBank::standard(100).unwrap();
        let cfg = EnrichmentConfig::default();
        let grid = build_epoch_grid(&rec, 1, &bank, &cfg).unwrap();
        assert_eq!(grid.shape(), (30, 7));
        assert_eq!(grid.epoch, 1);
        assert!(grid.matrices().iter().all(|m| m.eig().unwrap().min_eigenvalue() > 0.0));
        assert!(grid.features().iter().all(|a| a.rows() == 3 && a.k() == 1));
        assert!(grid.feature(0, 0).as_matrix().iter().all(|&v| v > 0.0));

        let zeros = EnrichmentConfig {
            feature_source: FeatureSource::Zeros,
            ..cfg.clone()
        };
        let grid = build_epoch_grid(&rec, 0, &bank, &zeros).unwrap();
        assert!(grid.features().iter().all(|a| a.as_matrix().iter().all(|&v| v == 0.0)));
        assert!(matches!(
            build_epoch_grid(&rec, 2, &bank, &cfg),
            Err(SignalError::EpochOutOfRange { .. })
        ));
    }

    #[test]
    fn silent_recording_is_rejected() {
        let rec = noise_recording(1, true);
        let bank = FilterBank::standard(100).unwrap();
        assert!(matches!(
            FilteredRecording::new(&rec, &bank),
            Err(SignalError::DegenerateSignal)
        ));
    }

    #[test]
    fn psd_of_silent_segment_is_zero_column() {
        let mut est = PsdEstimator::new(100);
        assert_eq!(est.average(&[0.0; 100], 100.0), 0.0);
    }

    #[test]
    fn tokens_layout_and_recentering() {
        let rec = noise_recording(3, false);
        let bank = FilterBank::standard(100).unwrap();
        let cfg = EnrichmentConfig {
            strategy: crate::enrichment::Strategy::Daw,
            ..EnrichmentConfig::default()
        };
        let filtered = FilteredRecording::new(&rec, &bank).unwrap();
        let enriched = filtered.enrich(&cfg).unwrap();
        assert_eq!(enriched.len(), 7);
        for mats in &enriched {
            assert_eq!(mats.len(), 90);
            let g = affine_invariant_mean(mats).unwrap();
            let d = (g.as_matrix() - nalgebra::DMatrix::<f64>::identity(4, 4)).norm();
            assert!(d < 1e-6, "{d}");
        }
        let toks = tokenize_recording(&rec, &bank, &cfg).unwrap();
        assert_eq!(toks.cache.header.m, 4);
        assert_eq!(toks.cache.tokens().len(), 3 * 7 * 30 * 10);
        // epoch 2, channel 5, segment 7
        let t = spd_to_token(&enriched[5][2 * 30 + 7]).unwrap();
        let at = ((2 * 7 + 5) * 30 + 7) * 10;
        for (a, b) in toks.cache.tokens()[at..at + 10].iter().zip(t.values()) {
            assert_eq!(*a, *b as f32);
        }
    }
}
