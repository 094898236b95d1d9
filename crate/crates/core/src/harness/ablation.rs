use serde::{Deserialize, Serialize};

use crate::enrichment::{EnrichmentConfig, FeatureSource, Strategy};
use crate::model::{MhaKind, ModelConfig};

/// A named, runnable enrichment and model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub enrichment: EnrichmentConfig,
    pub model: ModelConfig,
}

/// The three whitening strategies with handcrafted features, followed by
/// zero-valued augmentation, global covariance whitening, classic attention
/// and the two alternative sequence lengths, all derived from the base.
pub fn ablation_suite(enrichment: &EnrichmentConfig, model: &ModelConfig) -> Vec<Variant> {
    let variant = |name: &str, e: EnrichmentConfig, m: ModelConfig| Variant {
        name: name.to_string(),
        enrichment: e,
        model: m,
    };
    let handcrafted = EnrichmentConfig {
        feature_source: FeatureSource::AvgPsd,
        k: 1,
        ..enrichment.clone()
    };
    let mut out: Vec<Variant> = [Strategy::Daw, Strategy::Maw, Strategy::Wpa]
        .into_iter()
        .map(|s| {
            variant(
                s.name(),
                EnrichmentConfig {
                    strategy: s,
                    ..handcrafted.clone()
                },
                model.clone(),
            )
        })
        .collect();
    out.push(variant(
        "zero_augmentation",
        EnrichmentConfig {
            feature_source: FeatureSource::Zeros,
            ..enrichment.clone()
        },
        model.clone(),
    ));
    out.push(variant(
        "global_covariance",
        EnrichmentConfig {
            strategy: Strategy::GlobalCov,
            ..enrichment.clone()
        },
        model.clone(),
    ));
    out.push(variant(
        "classic_mha",
        enrichment.clone(),
        ModelConfig {
            mha_kind: MhaKind::Classic,
            ..model.clone()
        },
    ));
    for len in [13, 29] {
        out.push(variant(
            &format!("L{len}"),
            enrichment.clone(),
            ModelConfig {
                seq_len: len,
                ..model.clone()
            },
        ));
    }
    out
}
