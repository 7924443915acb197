use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sednoise_core::dataset::read_wav;
use sednoise_core::features::{extract_logmel_with, mel_filterbank, read_cache, write_cache, MelFilterbank};
use sednoise_core::{DatasetManifest, FeatureConfig, LabelRecord, LogMelMatrix};

use super::{join_clip, load_manifest_of, write_file, Options};
use crate::config::ExperimentConfig;
use crate::CliError;

const STAMP: &str = "config.json";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureSummary {
    pub computed: usize,
    pub skipped: usize,
    /// `(audio path, error)` for every clip that could not be processed.
    pub failed: Vec<(PathBuf, String)>,
}

pub fn feature_cache_path(output_dir: &Path, clip_id: &str) -> Result<PathBuf, CliError> {
    join_clip(&output_dir.join("features"), &format!("{clip_id}.logmel"))
}

enum Outcome {
    Computed,
    Skipped,
    Failed(PathBuf, String),
}

fn is_fresh(cache: &Path, audio: &Path) -> bool {
    let mtime = |p: &Path| fs::metadata(p).and_then(|m| m.modified()).ok();
    matches!((mtime(cache), mtime(audio)), (Some(c), Some(a)) if c >= a)
}

fn process(
    manifest: &DatasetManifest,
    record: &LabelRecord,
    cfg: &FeatureConfig,
    bank: &MelFilterbank,
    output_dir: &Path,
    reuse: bool,
) -> Outcome {
    let audio = manifest.audio_path(record);
    let cache = match feature_cache_path(output_dir, &record.clip_id) {
        Ok(c) => c,
        Err(e) => return Outcome::Failed(audio, e.to_string()),
    };
    if reuse && is_fresh(&cache, &audio) {
        return Outcome::Skipped;
    }
    let result = read_wav(&audio, record.clip_id.clone())
        .map_err(|e| e.to_string())
        .and_then(|clip| extract_logmel_with(&clip, cfg, bank).map_err(|e| e.to_string()))
        .and_then(|m| write_cache(&cache, &m).map_err(|e| e.to_string()));
    match result {
        Ok(()) => Outcome::Computed,
        Err(e) => Outcome::Failed(audio, e),
    }
}

/// Extracts and caches log-mel features for every clip of the manifest.
///
/// A cache entry is reused when it is newer than its audio file and the
/// feature config equals the one recorded in `features/config.json`.
/// Per-clip failures are collected rather than aborting the batch.
pub fn cmd_features(cfg: &ExperimentConfig, opts: &Options) -> Result<FeatureSummary, CliError> {
    let manifest = load_manifest_of(cfg)?;
    let fc = cfg.features();
    let bank = mel_filterbank(&fc)?;
    let stamp_path = cfg.output_dir.join("features").join(STAMP);
    let stamp = serde_json::to_string_pretty(&fc).expect("feature config serializes");
    let reuse = !opts.force && fs::read_to_string(&stamp_path).is_ok_and(|s| s == stamp);

    let outcomes: Vec<Outcome> = opts.install(|| {
        manifest
            .records
            .par_iter()
            .map(|r| process(&manifest, r, &fc, &bank, &cfg.output_dir, reuse))
            .collect()
    })?;
    write_file(&stamp_path, stamp)?;

    let mut summary = FeatureSummary::default();
    for o in outcomes {
        match o {
            Outcome::Computed => summary.computed += 1,
            Outcome::Skipped => summary.skipped += 1,
            Outcome::Failed(p, e) => summary.failed.push((p, e)),
        }
    }
    Ok(summary)
}

/// Cached matrices for every record, in manifest order.
pub(crate) fn load_cached(cfg: &ExperimentConfig, manifest: &DatasetManifest) -> Result<Vec<LogMelMatrix>, CliError> {
    manifest
        .records
        .par_iter()
        .map(|r| {
            let path = feature_cache_path(&cfg.output_dir, &r.clip_id)?;
            read_cache(&path, r.clip_id.clone()).map_err(|e| CliError::io(&path, e))
        })
        .collect()
}
