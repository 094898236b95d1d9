//! Seeded synthetic corpus standing in for real polysomnography.
//!
//! Every class owns a mixing matrix and a band-power profile. A recording is a
//! sequence of labelled epochs; within an epoch the band-limited sources are
//! weighted by the class profile, mixed, and passed through a per-recording
//! gain matrix that plays the role of inter-subject variability.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::features::{segment_covariance, zscore};
use super::filter::{apply_filter, design_bandpass};
use super::grid::STANDARD_BANDS;
use super::recording::{Recording, EPOCH_SECONDS, NUM_STAGES};
use super::SignalError;
use crate::spd::{affine_invariant_mean, matrix_log, SpdMatrix};
use crate::enrichment::whiten;
use crate::tokenization::tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub recordings: usize,
    pub epochs: usize,
    pub n_signals: usize,
    pub fs: usize,
    pub seed: u64,
    /// Relative class frequencies; uniform when absent.
    pub proportions: Option<Vec<f64>>,
    /// Scale of the differences between class prototypes.
    pub separation: f64,
    /// Scale of the per-recording gain perturbation.
    pub subject_variability: f64,
    /// Standard deviation of the additive white sensor noise.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 3,
            recordings: 6,
            epochs: 120,
            n_signals: 4,
            fs: 100,
            seed: 7,
            proportions: None,
            separation: 1.0,
            subject_variability: 0.3,
            noise: 0.1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SignalError> {
        let bad = |m: String| Err(SignalError::InvalidSpec(m));
        if !(2..=NUM_STAGES).contains(&self.classes) {
            return bad(format!("classes must be in 2..={NUM_STAGES}, got {}", self.classes));
        }
        if self.recordings == 0 || self.epochs == 0 {
            return bad("need at least one recording and one epoch".into());
        }
        if self.n_signals < 2 {
            return bad(format!("need at least 2 signals, got {}", self.n_signals));
        }
        if self.fs <= 90 {
            return bad(format!("fs must exceed 90 Hz, got {}", self.fs));
        }
        if let Some(p) = &self.proportions {
            if p.len() != self.classes || p.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return bad("proportions need one positive entry per class".into());
            }
        }
        for (name, v) in [
            ("separation", self.separation),
            ("subject_variability", self.subject_variability),
            ("noise", self.noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a nonnegative number"));
            }
        }
        Ok(())
    }

    /// Exact per-class epoch counts by largest remainder.
    pub fn class_counts(&self) -> Vec<usize> {
        let weights = self
            .proportions
            .clone()
            .unwrap_or_else(|| vec![1.0; self.classes]);
        let total: f64 = weights.iter().sum();
        let quotas: Vec<f64> = weights.iter().map(|w| w / total * self.epochs as f64).collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..self.classes).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let missing = self.epochs - counts.iter().sum::<usize>();
        for &c in order.iter().take(missing) {
            counts[c] += 1;
        }
        counts
    }
}

struct ClassPrototype {
    mixing: DMatrix<f64>,
    band_gain: Vec<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn prototypes(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<ClassPrototype> {
    let n = spec.n_signals;
    (0..spec.classes)
        .map(|_| {
            let mixing = DMatrix::from_fn(n, n, |i, j| {
                let base = if i == j { 1.0 } else { 0.0 };
                base + spec.separation * gaussian(rng) / (n as f64).sqrt()
            });
            let band_gain = STANDARD_BANDS
                .iter()
                .map(|_| (0.5 * spec.separation * gaussian(rng)).exp())
                .collect();
            ClassPrototype { mixing, band_gain }
        })
        .collect()
}

/// Labels in runs of 3 to 8 epochs with exactly `counts[c]` epochs of class `c`.
fn label_sequence(counts: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut remaining = counts.to_vec();
    let total: usize = counts.iter().sum();
    let mut labels = Vec::with_capacity(total);
    let mut previous = None;
    while labels.len() < total {
        let candidates: Vec<usize> = (0..remaining.len())
            .filter(|&c| remaining[c] > 0 && Some(c) != previous)
            .collect();
        let pool: Vec<usize> = if candidates.is_empty() {
            (0..remaining.len()).filter(|&c| remaining[c] > 0).collect()
        } else {
            candidates
        };
        let weight: usize = pool.iter().map(|&c| remaining[c]).sum();
        let mut pick = rng.random_range(0..weight);
        let class = *pool
            .iter()
            .find(|&&c| {
                if pick < remaining[c] {
                    true
                } else {
                    pick -= remaining[c];
                    false
                }
            })
            .expect("weighted pick within total");
        let run = rng.random_range(3..=8).min(remaining[class]);
        labels.extend(std::iter::repeat_n(class, run));
        remaining[class] -= run;
        previous = Some(class);
    }
    labels
}

fn band_sources(spec: &SyntheticSpec, t: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<Vec<f64>>>, SignalError> {
    STANDARD_BANDS
        .iter()
        .map(|&(lo, hi)| {
            let filter = design_bandpass(lo, hi, spec.fs as f64)?;
            (0..spec.n_signals)
                .map(|_| {
                    let white: Vec<f64> = (0..t).map(|_| gaussian(rng)).collect();
                    zscore(&apply_filter(&filter, &white))
                })
                .collect()
        })
        .collect()
}

/// Deterministic synthetic recordings with ids `synth-000`, `synth-001`, ….
pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<Vec<Recording>, SignalError> {
    spec.validate()?;
    let n = spec.n_signals;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let classes = prototypes(spec, &mut rng);
    let counts = spec.class_counts();
    let epoch_len = EPOCH_SECONDS * spec.fs;
    let t = epoch_len * spec.epochs;

    (0..spec.recordings)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(r as u64 + 1);
            let gain = DMatrix::from_fn(n, n, |i, j| {
                let base = if i == j { 1.0 } else { 0.0 };
                base + spec.subject_variability * gaussian(&mut rng) / (n as f64).sqrt()
            });
            let labels = label_sequence(&counts, &mut rng);
            let sources = band_sources(spec, t, &mut rng)?;
            let mixed: Vec<DMatrix<f64>> = classes.iter().map(|c| &gain * &c.mixing).collect();

            let mut signals = vec![vec![0.0; t]; n];
            let mut drive = DVector::<f64>::zeros(n);
            for (e, &label) in labels.iter().enumerate() {
                let proto = &classes[label];
                for i in e * epoch_len..(e + 1) * epoch_len {
                    drive.fill(0.0);
                    for (b, band) in sources.iter().enumerate() {
                        let w = proto.band_gain[b];
                        for (j, src) in band.iter().enumerate() {
                            drive[j] += w * src[i];
                        }
                    }
                    let x = &mixed[label] * &drive;
                    for (s, v) in signals.iter_mut().zip(x.iter()) {
                        s[i] = v + spec.noise * gaussian(&mut rng);
                    }
                }
            }
            Recording::new(format!("synth-{r:03}"), spec.fs, signals, labels)
        })
        .collect()
}

/// Accuracy of a nearest-centroid classifier on whitened one-second
/// covariance matrices of the unfiltered signals, scored in the log domain.
///
/// Each recording is whitened by the affine-invariant mean of its own
/// matrices; centroids are per-class means of the log tokens over all
/// recordings; every segment is then assigned to the closest centroid.
pub fn centroid_oracle_accuracy(recordings: &[Recording]) -> Result<f64, SignalError> {
    let mut samples: Vec<(usize, Vec<f64>)> = Vec::new();
    for rec in recordings {
        let standardized = rec.signals().iter().map(|s| zscore(s)).collect::<Result<Vec<_>, _>>()?;
        let len = rec.samples_per_epoch();
        let mut mats: Vec<SpdMatrix> = Vec::new();
        let mut labels = Vec::new();
        for (e, &label) in rec.labels().iter().enumerate() {
            let rows: Vec<&[f64]> = standardized.iter().map(|s| &s[e * len..(e + 1) * len]).collect();
            let covs = segment_covariance(&rows, rec.fs())?;
            labels.extend(std::iter::repeat_n(label, covs.len()));
            mats.extend(covs);
        }
        let g = affine_invariant_mean(&mats)?;
        for (x, label) in mats.iter().zip(labels) {
            let token = tokenize(&matrix_log(&whiten(x, &g)?)?);
            samples.push((label, token.into_values()));
        }
    }
    let classes = samples.iter().map(|(l, _)| l + 1).max().unwrap_or(0);
    let dim = samples.first().map(|(_, t)| t.len()).unwrap_or(0);
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (label, t) in &samples {
        counts[*label] += 1;
        for (s, v) in sums[*label].iter_mut().zip(t) {
            *s += v;
        }
    }
    let centroids: Vec<Option<Vec<f64>>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
        .collect();
    let correct = samples
        .iter()
        .filter(|(label, t)| {
            let best = centroids
                .iter()
                .enumerate()
                .filter_map(|(c, cen)| {
                    cen.as_ref().map(|cen| (c, cen.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>()))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(c, _)| c);
            best == Some(*label)
        })
        .count();
    Ok(correct as f64 / samples.len().max(1) as f64)
}
