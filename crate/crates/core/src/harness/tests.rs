use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{ParamSet, Tensor};
use crate::enrichment::{EnrichmentConfig, FeatureSource, Strategy};
use crate::model::{MhaKind, Model, ModelConfig};
use crate::signal::{CacheHeader, TokenCache};

fn header(epochs: usize) -> CacheHeader {
    CacheHeader {
        n: 2,
        k: 1,
        m: 3,
        p_flag: 0,
        channels: 7,
        segments: 3,
        epochs: epochs as u32,
        strategy: Strategy::Maw,
        alpha: 1.0,
    }
}

/// Tokens whose first coordinate encodes the label, plus noise.
fn fixture_set(id: &str, labels: Vec<usize>, seed: u64) -> TokenSet {
    let h = header(labels.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_epoch = h.tokens_per_epoch() * h.token_dim();
    let mut tokens = Vec::with_capacity(per_epoch * labels.len());
    for &l in &labels {
        for i in 0..per_epoch {
            let signal = if i % 6 == 0 { l as f32 - 1.0 } else { 0.0 };
            tokens.push(signal + 0.3 * (rng.random::<f32>() - 0.5));
        }
    }
    TokenSet::new(id, labels, &TokenCache::new(h, tokens).unwrap()).unwrap()
}

fn runs_labels(epochs: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < epochs {
        let l = rng.random_range(0..3);
        let run = rng.random_range(3..7);
        out.extend(std::iter::repeat_n(l, run));
    }
    out.truncate(epochs);
    out
}

fn fixture_corpus() -> Corpus {
    Corpus::new(
        (0..4)
            .map(|i| fixture_set(&format!("r{i}"), runs_labels(40, 100 + i), 200 + i))
            .collect(),
    )
    .unwrap()
}

fn fixture_fold() -> FoldSpec {
    FoldSpec {
        train: vec!["r0".into(), "r1".into()],
        validation: vec!["r2".into()],
        test: vec!["r3".into()],
    }
}

fn tiny3() -> ModelConfig {
    ModelConfig {
        classes: 3,
        ..ModelConfig::tiny()
    }
}

#[test]
fn sequence_targets() {
    let set = fixture_set("a", vec![0; 100], 1);
    let train = build_sequences(&set, 0, 10, Targets::Context).unwrap();
    assert_eq!(train.len(), 80);
    assert_eq!((train[0].center, train[79].center), (10, 89));
    let test = build_sequences(&set, 0, 10, Targets::Clipped(24)).unwrap();
    assert_eq!(test.len(), 52);
    assert_eq!((test[0].center, test[51].center), (24, 75));
    let short = fixture_set("b", vec![0; 20], 1);
    assert!(matches!(
        build_sequences(&short, 0, 10, Targets::Context),
        Err(HarnessError::RecordingTooShort { epochs: 20, needed: 21, .. })
    ));
}

#[test]
fn clipped_targets_do_not_depend_on_ell() {
    for epochs in [49, 60, 120, 1000] {
        let reference: Vec<usize> = target_range(epochs, 0, Targets::Clipped(24)).collect();
        assert_eq!(reference.len(), epochs - 48);
        for ell in [1, 2, 6, 10, 14, 24] {
            assert_eq!(target_range(epochs, ell, Targets::Clipped(24)).collect::<Vec<_>>(), reference);
        }
    }
    assert_eq!(target_range(40, 2, Targets::Clipped(24)).len(), 0);
}

#[test]
fn oversampling() {
    let counts = [10usize, 5, 1];
    let items: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| (0..n).map(move |i| (c, i)))
        .collect();
    let out = oversample(&items, |x| x.0, 3, 9).unwrap();
    let mut hist = [0; 3];
    for x in &out {
        hist[x.0] += 1;
    }
    assert_eq!(hist, [10, 10, 10]);
    for x in &items {
        assert!(out.contains(x));
    }
    // class 1 duplicates each item exactly once before any repeats twice
    let mut per_item: HashMap<(usize, usize), usize> = HashMap::new();
    for x in out.iter().filter(|x| x.0 == 1) {
        *per_item.entry(*x).or_default() += 1;
    }
    assert!(per_item.values().all(|&n| n == 2));
    assert_eq!(out, oversample(&items, |x| x.0, 3, 9).unwrap());

    let balanced: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let mut perm = oversample(&balanced, |&x| x, 3, 1).unwrap();
    assert_eq!(perm.len(), 12);
    perm.sort();
    let mut sorted = balanced.clone();
    sorted.sort();
    assert_eq!(perm, sorted);

    assert!(matches!(
        oversample(&[0usize, 0, 2], |&x| x, 3, 0),
        Err(HarnessError::MissingClass(1))
    ));
}

#[test]
fn metric_examples() {
    let perfect = MetricsReport::from_predictions(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
    assert_eq!(perfect.mf1, 100.0);
    assert_eq!(perfect.accuracy, 100.0);

    let toy = MetricsReport::from_confusion(vec![vec![2, 1], vec![1, 2]]).unwrap();
    for f in &toy.f1 {
        assert!((f - 200.0 / 3.0).abs() < 1e-12);
    }
    assert!((toy.mf1 - 200.0 / 3.0).abs() < 1e-12);

    // constant predictor: 8 of class 0, 2 of class 1, always predicts 0
    let constant = MetricsReport::from_confusion(vec![vec![8, 0], vec![2, 0]]).unwrap();
    assert!((constant.accuracy - 80.0).abs() < 1e-12);
    assert!((constant.f1[0] - 100.0 * 16.0 / 18.0).abs() < 1e-12);
    assert_eq!(constant.f1[1], 0.0);
    assert!(constant.mf1 < constant.accuracy);

    // absent class counts as zero
    let absent = MetricsReport::from_confusion(vec![vec![3, 0, 0], vec![0, 3, 0], vec![0, 0, 0]]).unwrap();
    assert_eq!(absent.f1, vec![100.0, 100.0, 0.0]);
    assert!((absent.mf1 - 200.0 / 3.0).abs() < 1e-12);

    assert!(MetricsReport::from_confusion(vec![vec![1, 2]]).is_err());
    assert!(MetricsReport::from_predictions(&[0, 3], &[0, 0], 3).is_err());
}

#[test]
fn mf1_invariant_under_relabeling() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth: Vec<usize> = (0..200).map(|_| rng.random_range(0..5)).collect();
    let pred: Vec<usize> = truth
        .iter()
        .map(|&t| if rng.random::<f64>() < 0.6 { t } else { rng.random_range(0..5) })
        .collect();
    let base = MetricsReport::from_predictions(&truth, &pred, 5).unwrap();
    let perm = [3, 0, 4, 1, 2];
    let relabel = |v: &[usize]| v.iter().map(|&x| perm[x]).collect::<Vec<_>>();
    let other = MetricsReport::from_predictions(&relabel(&truth), &relabel(&pred), 5).unwrap();
    assert!((base.mf1 - other.mf1).abs() < 1e-12);
    assert_eq!(base.accuracy, other.accuracy);
}

#[test]
fn confusion_csv_layout() {
    let r = MetricsReport::from_confusion(vec![vec![2, 1], vec![0, 3]]).unwrap();
    let csv = r.confusion_csv(&class_names(2));
    assert_eq!(csv, "true\\predicted,class0,class1\nclass0,2,1\nclass1,0,3\n");
    assert_eq!(class_names(5)[3], "N3");
}

#[test]
fn fold_aggregation() {
    let with_mf1 = |confusion: Vec<Vec<u64>>| MetricsReport::from_confusion(confusion).unwrap();
    let one = aggregate(&[with_mf1(vec![vec![3, 1], vec![1, 3]])]).unwrap();
    assert_eq!(one.mf1.std, 0.0);

    let s = mean_std(&[80.0, 82.0]);
    assert_eq!(s.mean, 81.0);
    assert!((s.std - 2f64.sqrt()).abs() < 1e-12);
    assert_eq!(mean_std(&[77.5, 77.5, 77.5]).std, 0.0);
    let s = mean_std(&[1.0, 2.0, 3.0, 4.0]);
    assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);

    let a = with_mf1(vec![vec![4, 0], vec![0, 4]]);
    let b = with_mf1(vec![vec![2, 2], vec![0, 4]]);
    let agg = aggregate(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(agg.runs, 2);
    assert!((agg.mf1.mean - (a.mf1 + b.mf1) / 2.0).abs() < 1e-12);
    assert!((agg.f1[1].std - (a.f1[1] - b.f1[1]).abs() / 2f64.sqrt()).abs() < 1e-12);
    assert!(aggregate(&[]).is_err());
    assert_eq!(format!("{}", agg.accuracy), "87.50 ± 17.68");
}

#[test]
fn adam_behaviour() {
    let mut params = ParamSet::new();
    params.push("w", Tensor::vector(vec![1.0, -2.0]));
    let before = params.clone();
    let mut frozen = Adam::new(0.0, &params);
    let g = vec![Tensor::vector(vec![0.3, -0.1])];
    frozen.step(params.tensors_mut(), &g);
    assert_eq!(params, before);

    // first step moves every coordinate by lr against the gradient sign
    let mut adam = Adam::new(0.1, &params);
    adam.step(params.tensors_mut(), &g);
    assert!((params.get(0).data()[0] - 0.9).abs() < 1e-6);
    assert!((params.get(0).data()[1] + 1.9).abs() < 1e-6);

    for _ in 0..2000 {
        let w = params.get(0).data().to_vec();
        let grad = vec![Tensor::vector(w.iter().map(|x| 2.0 * (x - 0.5)).collect())];
        adam.step(params.tensors_mut(), &grad);
    }
    assert!(params.get(0).data().iter().all(|x| (x - 0.5).abs() < 1e-3));
}

#[test]
fn folds_and_leakage() {
    assert!(fixture_fold().validate().is_ok());
    let leaky = FoldSpec {
        train: vec!["a".into()],
        validation: vec![],
        test: vec!["a".into()],
    };
    assert!(leaky.validate().is_err());
    assert!(FoldSpec {
        train: vec!["a".into()],
        ..FoldSpec::default()
    }
    .validate()
    .is_err());

    let ids: Vec<String> = (0..6).map(|i| format!("s{i}")).collect();
    let folds = FoldSpec::rotating(&ids, 1, 1).unwrap();
    assert_eq!(folds.len(), 6);
    for (i, f) in folds.iter().enumerate() {
        f.validate().unwrap();
        assert_eq!(f.test, vec![ids[i].clone()]);
        assert_eq!(f.validation, vec![ids[(i + 1) % 6].clone()]);
        assert_eq!(f.train.len(), 4);
    }
    assert!(FoldSpec::rotating(&ids[..2], 1, 1).is_err());
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let corpus = fixture_corpus();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        max_passes: 2,
        batch_size: 8,
        clip_test: 2,
        ..TrainConfig::default()
    };
    let out = train(&corpus, &fixture_fold(), &tiny3(), &cfg).unwrap();
    let fresh = Model::new(tiny3(), cfg.seed).unwrap();
    assert_eq!(out.model.params(), fresh.params());
    assert_eq!(out.history.len(), 2);
    for h in &out.history {
        assert_eq!(h.validation_mf1, out.initial_validation.mf1);
    }
    assert_eq!(out.best_pass, 0);
}

#[test]
fn training_learns_and_is_deterministic() {
    let corpus = fixture_corpus();
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        max_passes: 6,
        batch_size: 8,
        clip_test: 2,
        seed: 5,
        ..TrainConfig::default()
    };
    let model_cfg = ModelConfig {
        dropout: 0.1,
        ..tiny3()
    };
    let a = run_fold(&corpus, &fixture_fold(), &model_cfg, &cfg, None).unwrap();
    assert!(a.validation.mf1 >= 90.0, "{:?}", a.history);
    assert!(a.test.mf1 >= 85.0, "{:?}", a.test);
    assert_eq!(a.test.total(), 36);
    let b = run_fold(&corpus, &fixture_fold(), &model_cfg, &cfg, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn finetune_starts_from_checkpoint() {
    let corpus = fixture_corpus();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut source = Model::new(tiny3(), 77).unwrap();
    let i = source.params().index_of("head.out.bias").unwrap();
    source.params_mut().get_mut(i).data_mut()[0] = 0.25;
    source.save(&path, serde_json::Value::Null).unwrap();
    let cfg = TrainConfig {
        max_passes: 0,
        clip_test: 2,
        finetune_from: Some(path.clone()),
        ..TrainConfig::default()
    };
    let out = train(&corpus, &fixture_fold(), &tiny3(), &cfg).unwrap();
    assert_eq!(out.model.params(), source.params());

    let other = ModelConfig {
        ff_dim: 10,
        ..tiny3()
    };
    assert!(matches!(
        train(&corpus, &fixture_fold(), &other, &cfg),
        Err(HarnessError::Incompatible(_))
    ));
}

#[test]
fn incompatible_model_rejected() {
    let corpus = fixture_corpus();
    let cfg = TrainConfig {
        clip_test: 2,
        ..TrainConfig::default()
    };
    let wrong = ModelConfig {
        input_dim: 4,
        ..tiny3()
    };
    assert!(matches!(
        train(&corpus, &fixture_fold(), &wrong, &cfg),
        Err(HarnessError::Incompatible(_))
    ));
    let two = ModelConfig {
        classes: 2,
        ..tiny3()
    };
    assert!(matches!(
        train(&corpus, &fixture_fold(), &two, &cfg),
        Err(HarnessError::LabelOutOfRange { .. })
    ));
}

#[test]
fn cross_validation_writes_artifacts() {
    let corpus = fixture_corpus();
    let folds = FoldSpec::rotating(&corpus.ids(), 1, 1).unwrap();
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        max_passes: 1,
        batch_size: 16,
        clip_test: 2,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let cv = cross_validate(&corpus, &folds[..2], &tiny3(), &cfg, Some(dir.path())).unwrap();
    assert_eq!(cv.folds.len(), 2);
    assert_eq!(cv.test.runs, 2);
    for f in 0..2 {
        let d = dir.path().join(format!("fold-{f}"));
        let back: FoldResult = serde_json::from_str(&std::fs::read_to_string(d.join("metrics.json")).unwrap()).unwrap();
        assert_eq!(back, cv.folds[f]);
        assert!(std::fs::read_to_string(d.join("confusion.csv")).unwrap().starts_with("true\\predicted"));
        let r = evaluate_checkpoint(&d.join("best.ckpt"), &corpus.select(&cv.folds[f].fold.test).unwrap(), 2).unwrap();
        assert_eq!(r, cv.folds[f].test);
    }
    assert!(dir.path().join("aggregate.json").exists());
    let mf1s: Vec<f64> = cv.folds.iter().map(|f| f.test.mf1).collect();
    assert_eq!(cv.test.mf1, mean_std(&mf1s));
}

#[test]
fn ablation_variants() {
    let base = EnrichmentConfig::default();
    assert_eq!(base.strategy, Strategy::Maw);
    let model = ModelConfig::default();
    let suite = ablation_suite(&base, &model);
    let names: Vec<&str> = suite.iter().map(|v| v.name.as_str()).collect();
    assert_eq!(
        names,
        ["DAW", "MAW", "WPA", "zero_augmentation", "global_covariance", "classic_mha", "L13", "L29"]
    );
    let by = |n: &str| suite.iter().find(|v| v.name == n).unwrap();
    assert_eq!(by("L13").model.ell(), 6);
    assert_eq!(by("L29").model.ell(), 14);
    let classic = by("classic_mha");
    assert_eq!(classic.enrichment, base);
    assert_eq!(
        ModelConfig {
            mha_kind: MhaKind::Sp,
            ..classic.model.clone()
        },
        model
    );
    assert_eq!(classic.model.mha_kind, MhaKind::Classic);
    assert_eq!(by("zero_augmentation").enrichment.feature_source, FeatureSource::Zeros);
    assert_eq!(by("global_covariance").enrichment.strategy, Strategy::GlobalCov);
    for v in &suite {
        v.model.validate().unwrap();
        v.enrichment.validate().unwrap();
    }
}

#[test]
fn token_set_storage_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let set = fixture_set("rec-a", runs_labels(12, 3), 4);
    let tokens = crate::signal::RecordingTokens {
        id: "rec-a".into(),
        labels: set.labels().to_vec(),
        cache: TokenCache::new(header(12), vec![0.5; 12 * 21 * 6]).unwrap(),
    };
    let path = write_token_set(dir.path(), &tokens).unwrap();
    let back = read_token_set(dir.path(), "rec-a").unwrap();
    assert_eq!(back.labels(), set.labels());
    assert_eq!(back.epoch(3), &[0.5; 126][..]);
    let corpus = Corpus::load(dir.path(), &["rec-a".to_string()]).unwrap();
    assert!(matches!(corpus.get("nope"), Err(HarnessError::UnknownRecording(_))));

    let hash = hash_file(&path).unwrap();
    assert_eq!(hash.len(), 64);
    assert_eq!(hash, hash_file(&path).unwrap());
    let caches = [("rec-a".to_string(), hash)].into_iter().collect();
    let manifest = Manifest::new("train", &crate::config::RunConfig::default(), caches).unwrap();
    let mpath = dir.path().join("run/manifest.toml");
    write_manifest(&mpath, &manifest).unwrap();
    let text = std::fs::read_to_string(&mpath).unwrap();
    let parsed: Manifest = toml::from_str(&text).unwrap();
    assert_eq!(parsed, manifest);
    let cfg: crate::config::RunConfig = parsed.config.try_into().unwrap();
    assert_eq!(cfg, crate::config::RunConfig::default());
}

#[test]
fn aggregate_table_layout() {
    let r = MetricsReport::from_confusion(vec![vec![1; 5]; 5]).unwrap();
    let agg = aggregate(&[r]).unwrap();
    let table = aggregate_table(&[("base".into(), agg)]);
    let header = table.lines().next().unwrap();
    assert!(header.starts_with("| run | folds | MF1 | N3 F1 | N2 F1 | N1 F1 |"));
    assert!(table.lines().nth(2).unwrap().starts_with("| base | 1 | 20.00 ± 0.00 |"));
}
