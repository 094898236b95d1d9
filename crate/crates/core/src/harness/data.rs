use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::model::ModelConfig;
use crate::signal::{cache_read, cache_write, CacheHeader, RecordingTokens, SignalError, TokenCache};

/// Tokens of one recording widened to `f64`, one contiguous block per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    id: String,
    labels: Vec<usize>,
    header: CacheHeader,
    data: Vec<f64>,
}

impl TokenSet {
    pub fn new(id: impl Into<String>, labels: Vec<usize>, cache: &TokenCache) -> Result<Self, HarnessError> {
        let id = id.into();
        let epochs = cache.header.epochs as usize;
        if labels.len() != epochs {
            return Err(HarnessError::Signal(SignalError::InvalidRecording(format!(
                "{id}: {} labels for {epochs} epochs",
                labels.len()
            ))));
        }
        Ok(TokenSet {
            id,
            labels,
            header: cache.header,
            data: cache.tokens().iter().map(|&v| f64::from(v)).collect(),
        })
    }

    pub fn from_tokens(tokens: &RecordingTokens) -> Result<Self, HarnessError> {
        Self::new(tokens.id.clone(), tokens.labels.clone(), &tokens.cache)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn header(&self) -> &CacheHeader {
        &self.header
    }

    pub fn n_epochs(&self) -> usize {
        self.labels.len()
    }

    pub fn tokens_per_epoch(&self) -> usize {
        self.header.tokens_per_epoch()
    }

    pub fn token_dim(&self) -> usize {
        self.header.token_dim()
    }

    /// Row-major `(C·S) × d(m)` tokens of epoch `e`.
    pub fn epoch(&self, e: usize) -> &[f64] {
        let len = self.tokens_per_epoch() * self.token_dim();
        &self.data[e * len..(e + 1) * len]
    }

    /// The `2ℓ + 1` epochs centred on `center`.
    pub fn window(&self, center: usize, ell: usize) -> Vec<&[f64]> {
        (center - ell..=center + ell).map(|e| self.epoch(e)).collect()
    }

    /// Checks that a model configuration can consume these tokens.
    pub fn check_compatible(&self, cfg: &ModelConfig) -> Result<(), HarnessError> {
        if cfg.epoch_tokens != self.tokens_per_epoch() {
            return Err(HarnessError::Incompatible(format!(
                "{}: {} tokens per epoch, model expects {}",
                self.id,
                self.tokens_per_epoch(),
                cfg.epoch_tokens
            )));
        }
        if cfg.input_token_dim() != self.token_dim() {
            return Err(HarnessError::Incompatible(format!(
                "{}: token length {}, model expects d(m) = {}",
                self.id,
                self.token_dim(),
                cfg.input_token_dim()
            )));
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= cfg.classes) {
            return Err(HarnessError::LabelOutOfRange {
                label,
                classes: cfg.classes,
            });
        }
        Ok(())
    }
}

fn cache_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.spdtok"))
}

fn labels_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.labels"))
}

/// Writes `<id>.spdtok` and the `<id>.labels` sidecar; returns the cache path.
pub fn write_token_set(dir: &Path, tokens: &RecordingTokens) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir)?;
    let path = cache_path(dir, &tokens.id);
    cache_write(&path, &tokens.cache)?;
    let labels: Vec<String> = tokens.labels.iter().map(|l| l.to_string()).collect();
    fs::write(labels_path(dir, &tokens.id), labels.join("\n") + "\n")?;
    Ok(path)
}

pub fn read_token_set(dir: &Path, id: &str) -> Result<TokenSet, HarnessError> {
    let cache = cache_read(&cache_path(dir, id))?;
    let text = fs::read_to_string(labels_path(dir, id))?;
    let labels = text
        .split_whitespace()
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| SignalError::CorruptCache(format!("{id}.labels: bad label {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    TokenSet::new(id, labels, &cache)
}

/// Token sets addressed by recording id.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    sets: Vec<TokenSet>,
}

impl Corpus {
    pub fn new(sets: Vec<TokenSet>) -> Result<Self, HarnessError> {
        let mut seen = HashSet::new();
        for s in &sets {
            if !seen.insert(s.id.clone()) {
                return Err(HarnessError::Config(format!("duplicate recording id {}", s.id)));
            }
        }
        Ok(Corpus { sets })
    }

    /// Reads the caches of `ids` from `dir`.
    pub fn load(dir: &Path, ids: &[String]) -> Result<Self, HarnessError> {
        Self::new(ids.iter().map(|id| read_token_set(dir, id)).collect::<Result<_, _>>()?)
    }

    pub fn get(&self, id: &str) -> Result<&TokenSet, HarnessError> {
        self.sets
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| HarnessError::UnknownRecording(id.to_string()))
    }

    pub fn select(&self, ids: &[String]) -> Result<Vec<&TokenSet>, HarnessError> {
        ids.iter().map(|id| self.get(id)).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.sets.iter().map(|s| s.id.clone()).collect()
    }

    pub fn sets(&self) -> &[TokenSet] {
        &self.sets
    }
}

/// Recording ids of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldSpec {
    pub train: Vec<String>,
    #[serde(default)]
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl FoldSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.test.is_empty() {
            return Err(HarnessError::InvalidFold("test set is empty".into()));
        }
        let mut seen = HashSet::new();
        for id in self.train.iter().chain(&self.validation).chain(&self.test) {
            if !seen.insert(id) {
                return Err(HarnessError::InvalidFold(format!("recording {id} appears twice")));
            }
        }
        Ok(())
    }

    /// Folds over `ids` in order: fold `i` tests on the `n_test` recordings
    /// starting at `i·n_test`, validates on the following `n_val` (cyclically)
    /// and trains on the rest.
    pub fn rotating(ids: &[String], n_val: usize, n_test: usize) -> Result<Vec<FoldSpec>, HarnessError> {
        if n_test == 0 || n_val + n_test >= ids.len() {
            return Err(HarnessError::InvalidFold(format!(
                "{} recordings cannot hold {n_val} validation and {n_test} test recordings plus training data",
                ids.len()
            )));
        }
        let n = ids.len();
        let folds = n / n_test;
        Ok((0..folds)
            .map(|f| {
                let pick = |offset: usize, count: usize| -> Vec<String> {
                    (0..count).map(|j| ids[(f * n_test + offset + j) % n].clone()).collect()
                };
                let test = pick(0, n_test);
                let validation = pick(n_test, n_val);
                let train = ids
                    .iter()
                    .filter(|id| !test.contains(id) && !validation.contains(id))
                    .cloned()
                    .collect();
                FoldSpec {
                    train,
                    validation,
                    test,
                }
            })
            .collect())
    }
}
