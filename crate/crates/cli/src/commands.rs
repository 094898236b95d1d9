use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use thiserror::Error;

use spdseq_core::config::{ConfigError, RunConfig};
use spdseq_core::diagnostics::gradient_suite;
use spdseq_core::harness::{
    self, aggregate, aggregate_table, ablation_suite, cache_hashes, class_names, cross_validate, enriched_means,
    evaluate_checkpoint, list_recordings, load_recordings, matrix_csv, run_fold, write_manifest, AggregateReport,
    Corpus, CrossValidation, FoldResult, FoldSpec, HarnessError, Manifest,
};
use spdseq_core::signal::{generate_synthetic_dataset, FilterBank, Recording, SignalError};

use crate::SynthArgs;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Runtime(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SignalError> for CliError {
    fn from(e: SignalError) -> Self {
        match e {
            SignalError::InvalidSpec(_) | SignalError::InvalidBand { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_)
            | HarnessError::InvalidFold(_)
            | HarnessError::Incompatible(_)
            | HarnessError::LabelOutOfRange { .. }
            | HarnessError::UnknownRecording(_)
            | HarnessError::MissingClass(_)
            | HarnessError::RecordingTooShort { .. } => CliError::Config(e.to_string()),
            HarnessError::Signal(s) => s.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn recording_ids(dir: &Path) -> Result<Vec<String>, CliError> {
    Ok(list_recordings(dir)?
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect())
}

pub fn init(out: &Path, desk: bool, recordings: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = if desk { RunConfig::desk() } else { RunConfig::default() };
    if let Some(dir) = recordings {
        let ids = recording_ids(dir)?;
        cfg.folds = FoldSpec::rotating(&ids, 1, 1)?;
        cfg.paths.recordings = dir.to_path_buf();
    }
    cfg.validate()?;
    write(out, &cfg.to_toml_string())?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut spec = cfg.synthetic.clone();
    macro_rules! apply {
        ($($field:ident => $target:ident),*) => {
            $(if let Some(v) = args.$field { spec.$target = v; })*
        };
    }
    apply!(classes => classes, recordings => recordings, epochs => epochs, signals => n_signals, fs => fs,
        seed => seed, separation => separation, subject_variability => subject_variability, noise => noise);
    let out = args.out.clone().unwrap_or(cfg.paths.recordings);
    let recordings = generate_synthetic_dataset(&spec)?;
    for rec in &recordings {
        rec.write_dir(&out.join(rec.id()))?;
    }
    println!("wrote {} recordings to {}", recordings.len(), out.display());
    Ok(())
}

fn preprocess_into(cfg: &RunConfig, cache_dir: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let recordings = load_recordings(&cfg.paths.recordings)?;
    if recordings.is_empty() {
        return Err(CliError::Config(format!("no recordings under {}", cfg.paths.recordings.display())));
    }
    info!("tokenizing {} recordings", recordings.len());
    let hashes = harness::preprocess(&recordings, &cfg.enrichment, cache_dir)?;
    write_manifest(&cache_dir.join("manifest.toml"), &Manifest::new("preprocess", cfg, hashes.clone())?)?;
    Ok(hashes)
}

pub fn preprocess(config: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let hashes = preprocess_into(&cfg, &cfg.paths.caches)?;
    println!("wrote {} token caches to {}", hashes.len(), cfg.paths.caches.display());
    Ok(())
}

fn fold_ids(folds: &[FoldSpec]) -> Vec<String> {
    let mut ids: Vec<String> = folds
        .iter()
        .flat_map(|f| f.train.iter().chain(&f.validation).chain(&f.test))
        .cloned()
        .collect();
    ids.sort();
    ids.dedup();
    ids
}

fn train_config(cfg: &RunConfig, output: &Path) -> Result<CrossValidation, CliError> {
    if cfg.folds.is_empty() {
        return Err(CliError::Config("the configuration defines no folds".into()));
    }
    let ids = fold_ids(&cfg.folds);
    let corpus = Corpus::load(&cfg.paths.caches, &ids)?;
    let hashes = cache_hashes(&cfg.paths.caches, &ids)?;
    write_manifest(&output.join("manifest.toml"), &Manifest::new("train", cfg, hashes)?)?;
    let cv = cross_validate(&corpus, &cfg.folds, &cfg.model, &cfg.train, Some(output))?;
    let table = aggregate_table(&[(output_name(output), cv.test.clone())]);
    write(&output.join("report.md"), &table)?;
    Ok(cv)
}

fn output_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn train(config: &Path, fold: Option<usize>, output: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(config)?;
    let output = output.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.output.clone());
    cfg.paths.output = output.clone();
    match fold {
        None => {
            let cv = train_config(&cfg, &output)?;
            for (i, f) in cv.folds.iter().enumerate() {
                println!(
                    "fold {i}: validation MF1 {:.2}, test MF1 {:.2}, accuracy {:.2}",
                    f.validation.mf1, f.test.mf1, f.test.accuracy
                );
            }
            println!("test MF1 {} over {} folds", cv.test.mf1, cv.test.runs);
        }
        Some(i) => {
            let spec = cfg
                .folds
                .get(i)
                .ok_or_else(|| CliError::Config(format!("fold {i} does not exist ({} folds)", cfg.folds.len())))?
                .clone();
            let ids = fold_ids(std::slice::from_ref(&spec));
            let corpus = Corpus::load(&cfg.paths.caches, &ids)?;
            let dir = output.join(format!("fold-{i}"));
            let hashes = cache_hashes(&cfg.paths.caches, &ids)?;
            write_manifest(&dir.join("manifest.toml"), &Manifest::new("train", &cfg, hashes)?)?;
            let r = run_fold(&corpus, &spec, &cfg.model, &cfg.train, Some(&dir))?;
            println!(
                "fold {i}: validation MF1 {:.2}, test MF1 {:.2}, accuracy {:.2}",
                r.validation.mf1, r.test.mf1, r.test.accuracy
            );
        }
    }
    Ok(())
}

pub fn eval(
    config: &Path,
    checkpoint: &Path,
    clip: Option<usize>,
    ids: &[String],
    out: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let ids: Vec<String> = if ids.is_empty() {
        let mut v: Vec<String> = cfg.folds.iter().flat_map(|f| f.test.clone()).collect();
        v.sort();
        v.dedup();
        v
    } else {
        ids.to_vec()
    };
    if ids.is_empty() {
        return Err(CliError::Config("no recordings to evaluate".into()));
    }
    let clip = clip.unwrap_or(cfg.train.clip_test);
    let corpus = Corpus::load(&cfg.paths.caches, &ids)?;
    let report = evaluate_checkpoint(checkpoint, &corpus.select(&ids)?, clip)?;
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).join("eval"));
    write(&out.join("metrics.json"), &serde_json::to_string_pretty(&report)?)?;
    write(&out.join("confusion.csv"), &report.confusion_csv(&class_names(report.classes())))?;
    let hashes = cache_hashes(&cfg.paths.caches, &ids)?;
    write_manifest(&out.join("manifest.toml"), &Manifest::new("eval", &cfg, hashes)?)?;
    println!(
        "MF1 {:.2}, accuracy {:.2} on {} targets (clip {clip}); wrote {}",
        report.mf1,
        report.accuracy,
        report.total(),
        out.display()
    );
    Ok(())
}

pub fn gradcheck(tiny: bool) -> Result<(), CliError> {
    let checks = gradient_suite(!tiny).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut failed = 0;
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status} {:<34} error {:.3e} (tolerance {:.0e})", c.name, c.error, c.tolerance);
        failed += usize::from(!c.passed);
    }
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

fn load_aggregate(dir: &Path) -> Result<Option<AggregateReport>, CliError> {
    let agg = dir.join("aggregate.json");
    if agg.is_file() {
        let cv: CrossValidation = serde_json::from_str(&fs::read_to_string(agg)?)?;
        return Ok(Some(cv.test));
    }
    let single = dir.join("metrics.json");
    if single.is_file() {
        let fold: FoldResult = serde_json::from_str(&fs::read_to_string(single)?)?;
        return Ok(Some(aggregate(&[fold.test])?));
    }
    warn!("skipping {}: neither aggregate.json nor metrics.json", dir.display());
    Ok(None)
}

pub fn report(dirs: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for d in dirs.iter().filter(|d| d.is_dir()) {
        if let Some(r) = load_aggregate(d)? {
            rows.push((output_name(d), r));
        }
    }
    if rows.is_empty() {
        return Err(CliError::Config("no run directory holds aggregate.json or metrics.json".into()));
    }
    let table = aggregate_table(&rows);
    print!("{table}");
    if let Some(p) = out {
        write(p, &table)?;
    }
    Ok(())
}

pub fn ablations(config: &Path, out: Option<&Path>, run: bool) -> Result<(), CliError> {
    let base = RunConfig::load(config)?;
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| base.paths.output.join("ablations"));
    let mut rows = Vec::new();
    for v in ablation_suite(&base.enrichment, &base.model) {
        let mut cfg = base.clone();
        cfg.enrichment = v.enrichment;
        cfg.model = v.model;
        cfg.paths.caches = base.paths.caches.join(&v.name);
        cfg.paths.output = base.paths.output.join(&v.name);
        cfg.validate()?;
        let path = out.join(format!("{}.toml", v.name));
        write(&path, &cfg.to_toml_string())?;
        println!("wrote {}", path.display());
        if run {
            preprocess_into(&cfg, &cfg.paths.caches)?;
            let cv = train_config(&cfg, &cfg.paths.output)?;
            println!("{}: test MF1 {}", v.name, cv.test.mf1);
            rows.push((v.name.clone(), cv.test));
        }
    }
    if run {
        let table = aggregate_table(&rows);
        print!("{table}");
        write(&out.join("ablations.md"), &table)?;
    }
    Ok(())
}

pub fn heatmap(config: &Path, id: &str, out: Option<&Path>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let rec = Recording::read_dir(&cfg.paths.recordings.join(id))?;
    let bank = FilterBank::standard(rec.fs())?;
    let means = enriched_means(&rec, &bank, &cfg.enrichment)?;
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.paths.output.join("heatmaps"));
    for (c, m) in means.iter().enumerate() {
        write(&out.join(format!("{id}-channel-{c}.csv")), &matrix_csv(m))?;
    }
    println!("wrote {} channel matrices to {}", means.len(), out.display());
    Ok(())
}
