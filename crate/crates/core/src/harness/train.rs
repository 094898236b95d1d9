use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{aggregate, AggregateReport, MetricsReport};
use super::report::class_names;
use super::sequences::{build_sequences, oversample, SequenceItem, Targets};
use super::{Corpus, FoldSpec, HarnessError, TokenSet};
use crate::autodiff::{ParamSet, Tensor};
use crate::model::{Model, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_passes: usize,
    /// Passes without a validation MF1 improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub oversample: bool,
    /// Epochs dropped at both ends of every test recording.
    pub clip_test: usize,
    pub finetune_from: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            max_passes: 100,
            patience: 10,
            seed: 0,
            oversample: true,
            clip_test: 24,
            finetune_from: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, ell: usize) -> Result<(), HarnessError> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(HarnessError::Config(format!("learning_rate must be ≥ 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be positive".into()));
        }
        if self.clip_test < ell {
            return Err(HarnessError::Config(format!(
                "clip_test = {} is smaller than ell = {ell}",
                self.clip_test
            )));
        }
        Ok(())
    }
}

/// Adaptive-moment gradient descent with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassLog {
    pub pass: usize,
    pub train_loss: f64,
    pub validation_mf1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model with the best validation parameters loaded.
    pub model: Model,
    pub initial_validation: MetricsReport,
    pub validation: MetricsReport,
    /// `0` when no pass improved on the initial parameters.
    pub best_pass: usize,
    pub history: Vec<PassLog>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn items_for(sets: &[&TokenSet], ell: usize, targets: Targets) -> Result<Vec<SequenceItem>, HarnessError> {
    let mut items = Vec::new();
    for (r, s) in sets.iter().enumerate() {
        items.extend(build_sequences(s, r, ell, targets)?);
    }
    Ok(items)
}

/// Scores `model` on the selected targets of `sets`.
pub fn evaluate(model: &Model, sets: &[&TokenSet], targets: Targets) -> Result<MetricsReport, HarnessError> {
    let cfg = model.config();
    for s in sets {
        s.check_compatible(cfg)?;
    }
    let ell = cfg.ell();
    let items = items_for(sets, ell, targets)?;
    if items.is_empty() {
        return Err(HarnessError::Config(format!(
            "no scorable targets: recordings are too short for {targets:?}"
        )));
    }
    let predicted = items
        .par_iter()
        .map(|it| {
            let logits = model.predict_logits(&sets[it.recording].window(it.center, ell))?;
            Ok(argmax(&logits))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let truth: Vec<usize> = items.iter().map(|it| it.label).collect();
    MetricsReport::from_predictions(&truth, &predicted, cfg.classes)
}

/// Loads a checkpoint and scores it on the clipped targets of `sets`.
pub fn evaluate_checkpoint(path: &Path, sets: &[&TokenSet], clip: usize) -> Result<MetricsReport, HarnessError> {
    let (model, _) = Model::load(path)?;
    evaluate(&model, sets, Targets::Clipped(clip))
}

pub fn train(
    corpus: &Corpus,
    fold: &FoldSpec,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, HarnessError> {
    fold.validate()?;
    model_cfg.validate()?;
    let ell = model_cfg.ell();
    cfg.validate(ell)?;
    if fold.train.is_empty() || fold.validation.is_empty() {
        return Err(HarnessError::InvalidFold("training needs training and validation recordings".into()));
    }
    let train_sets = corpus.select(&fold.train)?;
    let val_sets = corpus.select(&fold.validation)?;
    for s in train_sets.iter().chain(&val_sets) {
        s.check_compatible(model_cfg)?;
    }

    let mut model = match &cfg.finetune_from {
        Some(path) => {
            let (m, _) = Model::load(path)?;
            if m.config() != model_cfg {
                return Err(HarnessError::Incompatible(format!(
                    "{} was trained with a different model configuration",
                    path.display()
                )));
            }
            m
        }
        None => Model::new(model_cfg.clone(), cfg.seed)?,
    };

    let items = items_for(&train_sets, ell, Targets::Context)?;
    let initial_validation = evaluate(&model, &val_sets, Targets::Context)?;
    let mut best = (initial_validation.clone(), model.params().clone(), 0usize);
    let mut adam = Adam::new(cfg.learning_rate, model.params());
    let mut history = Vec::new();
    let mut stale = 0;

    for pass in 1..=cfg.max_passes {
        let order = if cfg.oversample {
            oversample(&items, |it| it.label, model_cfg.classes, mix(cfg.seed, pass as u64, 0))?
        } else {
            let mut v = items.clone();
            v.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, pass as u64, 0)));
            v
        };
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(j, it)| {
                    let window = train_sets[it.recording].window(it.center, ell);
                    let seed = mix(cfg.seed, pass as u64, (b * cfg.batch_size + j + 1) as u64);
                    model.loss_and_grads(&window, it.label, true, seed)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut grads = model.params().zeros_like();
            for (loss, g) in &results {
                loss_sum += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    for (a, x) in acc.data_mut().iter_mut().zip(gi.data()) {
                        *a += scale * x;
                    }
                }
            }
            adam.step(model.params_mut().tensors_mut(), &grads);
        }
        let val = evaluate(&model, &val_sets, Targets::Context)?;
        let train_loss = loss_sum / order.len().max(1) as f64;
        info!("pass {pass}: loss {train_loss:.4}, validation MF1 {:.2}", val.mf1);
        history.push(PassLog {
            pass,
            train_loss,
            validation_mf1: val.mf1,
        });
        if val.mf1 > best.0.mf1 {
            best = (val, model.params().clone(), pass);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let (validation, params, best_pass) = best;
    model.load_params(&params)?;
    Ok(TrainOutcome {
        model,
        initial_validation,
        validation,
        best_pass,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: FoldSpec,
    pub best_pass: usize,
    pub validation: MetricsReport,
    pub test: MetricsReport,
    pub history: Vec<PassLog>,
}

/// Trains one fold and scores the best checkpoint on the clipped test
/// recordings. With `out`, writes `best.ckpt`, `metrics.json` and
/// `confusion.csv` there.
pub fn run_fold(
    corpus: &Corpus,
    fold: &FoldSpec,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<FoldResult, HarnessError> {
    let outcome = train(corpus, fold, model_cfg, cfg)?;
    let test_sets = corpus.select(&fold.test)?;
    let test = evaluate(&outcome.model, &test_sets, Targets::Clipped(cfg.clip_test))?;
    let result = FoldResult {
        fold: fold.clone(),
        best_pass: outcome.best_pass,
        validation: outcome.validation,
        test,
        history: outcome.history,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        outcome.model.save(
            &dir.join("best.ckpt"),
            serde_json::json!({ "best_pass": result.best_pass, "fold": result.fold }),
        )?;
        fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&result)?)?;
        let names = class_names(model_cfg.classes);
        fs::write(dir.join("confusion.csv"), result.test.confusion_csv(&names))?;
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub folds: Vec<FoldResult>,
    pub test: AggregateReport,
    pub validation: AggregateReport,
}

/// Runs every fold (in parallel on the current rayon pool) and aggregates
/// the test scores. Fold `i` writes into `out/fold-{i}`.
pub fn cross_validate(
    corpus: &Corpus,
    folds: &[FoldSpec],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<CrossValidation, HarnessError> {
    if folds.is_empty() {
        return Err(HarnessError::InvalidFold("no folds given".into()));
    }
    let results = folds
        .par_iter()
        .enumerate()
        .map(|(i, fold)| {
            let dir = out.map(|d| d.join(format!("fold-{i}")));
            run_fold(corpus, fold, model_cfg, cfg, dir.as_deref())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let test = aggregate(&results.iter().map(|r| r.test.clone()).collect::<Vec<_>>())?;
    let validation = aggregate(&results.iter().map(|r| r.validation.clone()).collect::<Vec<_>>())?;
    let cv = CrossValidation {
        folds: results,
        test,
        validation,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("aggregate.json"), serde_json::to_string_pretty(&cv)?)?;
    }
    Ok(cv)
}
