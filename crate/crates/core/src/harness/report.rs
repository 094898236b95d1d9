use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::AggregateReport;
use super::HarnessError;
use crate::enrichment::EnrichmentConfig;
use crate::signal::{FilterBank, FilteredRecording, Recording, NUM_STAGES, STAGE_NAMES};
use crate::spd::euclidean_mean;

/// Stage names for five classes, `class0`, `class1`, … otherwise.
pub fn class_names(classes: usize) -> Vec<String> {
    if classes == NUM_STAGES {
        STAGE_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..classes).map(|c| format!("class{c}")).collect()
    }
}

/// Markdown table of `mean ± std` per run: MF1 then per-class F1. With five
/// classes the F1 columns are N3, N2, N1, followed by Awake and REM.
pub fn aggregate_table(rows: &[(String, AggregateReport)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let k = first.f1.len();
    let names = class_names(k);
    let order: Vec<usize> = if k == NUM_STAGES { vec![3, 2, 1, 0, 4] } else { (0..k).collect() };
    let mut out = String::from("| run | folds | MF1 |");
    for &c in &order {
        out.push_str(&format!(" {} F1 |", names[c]));
    }
    out.push_str("\n|---|---|---|");
    out.push_str(&"---|".repeat(order.len()));
    out.push('\n');
    for (name, r) in rows {
        out.push_str(&format!("| {name} | {} | {} |", r.runs, r.mf1));
        for &c in &order {
            match r.f1.get(c) {
                Some(s) => out.push_str(&format!(" {s} |")),
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

/// Hex SHA-256 of a file's bytes.
pub fn hash_file(path: &Path) -> Result<String, HarnessError> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Everything needed to rerun a command: its name, the crate version, the
/// fully materialized configuration and the hashes of the caches it read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub caches: BTreeMap<String, String>,
    pub config: toml::Table,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, config: &C, caches: BTreeMap<String, String>) -> Result<Self, HarnessError> {
        Ok(Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            caches,
            config: toml::Table::try_from(config)?,
        })
    }
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, toml::to_string_pretty(manifest)?)?;
    Ok(())
}

/// Per-channel arithmetic mean of a recording's enriched matrices.
pub fn enriched_means(
    recording: &Recording,
    bank: &FilterBank,
    cfg: &EnrichmentConfig,
) -> Result<Vec<DMatrix<f64>>, HarnessError> {
    let filtered = FilteredRecording::new(recording, bank)?;
    filtered
        .enrich(cfg)?
        .iter()
        .map(|mats| {
            let dense: Vec<DMatrix<f64>> = mats.iter().map(|m| m.as_matrix().clone()).collect();
            euclidean_mean(&dense).map_err(|e| HarnessError::Signal(e.into()))
        })
        .collect()
}

/// Comma-separated rows, full precision.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{}", m[(r, c)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
