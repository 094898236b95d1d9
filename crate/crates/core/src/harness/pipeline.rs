use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::data::write_token_set;
use super::report::hash_file;
use super::HarnessError;
use crate::enrichment::EnrichmentConfig;
use crate::signal::{tokenize_recording, FilterBank, Recording};

/// Sub-directories of `dir` that hold a recording, sorted by name.
pub fn list_recordings(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.join("header.txt").is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_recordings(dir: &Path) -> Result<Vec<Recording>, HarnessError> {
    list_recordings(dir)?
        .iter()
        .map(|p| Ok(Recording::read_dir(p)?))
        .collect()
}

/// Filters, enriches and tokenizes every recording into `cache_dir`, one job
/// per recording on the current rayon pool. Returns cache hashes by id.
pub fn preprocess(
    recordings: &[Recording],
    cfg: &EnrichmentConfig,
    cache_dir: &Path,
) -> Result<BTreeMap<String, String>, HarnessError> {
    cfg.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    recordings
        .par_iter()
        .map(|rec| {
            let bank = FilterBank::standard(rec.fs())?;
            let tokens = tokenize_recording(rec, &bank, cfg)?;
            let path = write_token_set(cache_dir, &tokens)?;
            Ok((rec.id().to_string(), hash_file(&path)?))
        })
        .collect()
}

/// Hashes of the existing caches of `ids`.
pub fn cache_hashes(cache_dir: &Path, ids: &[String]) -> Result<BTreeMap<String, String>, HarnessError> {
    ids.iter()
        .map(|id| Ok((id.clone(), hash_file(&cache_dir.join(format!("{id}.spdtok")))?)))
        .collect()
}
