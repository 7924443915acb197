mod features;
mod inject;
mod report;
mod run;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sednoise_core::dataset::{gen_synthetic_dataset, read_wav};
use sednoise_core::{load_manifest, AudioClip, DatasetManifest};

use crate::config::ExperimentConfig;
use crate::CliError;

pub use features::{cmd_features, feature_cache_path, FeatureSummary};
pub use inject::{cmd_inject, InjectSummary};
pub use report::{cmd_report, CellSummary, ReportSummary};
pub use run::{cmd_run, RunSummary};
pub use synth::{cmd_synth, SynthSummary};

/// Flags shared by every command.
#[derive(Debug, Clone, Copy, Default)]
pub struct Options {
    /// Recompute cached artifacts even when they look up to date.
    pub force: bool,
    /// Worker threads; `None` uses one per core.
    pub jobs: Option<usize>,
    /// Print progress to stderr.
    pub verbose: bool,
}

impl Options {
    /// Runs `f` on a pool sized by `jobs`.
    pub(crate) fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.jobs {
            if n == 0 {
                return Err(CliError::Config("--jobs must be >= 1".into()));
            }
            b = b.num_threads(n);
        }
        let pool = b.build().map_err(|e| CliError::Data(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(f))
    }
}

/// A dataset with its audio in memory.
pub(crate) struct Loaded {
    pub manifest: DatasetManifest,
    /// `clips[i]` belongs to `manifest.records[i]`.
    pub clips: Vec<AudioClip>,
    pub distractors: Vec<AudioClip>,
}

pub(crate) fn load_manifest_of(cfg: &ExperimentConfig) -> Result<DatasetManifest, CliError> {
    let path = cfg
        .dataset
        .manifest
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs `dataset.manifest`".into()))?;
    let root = cfg
        .dataset
        .audio_root
        .clone()
        .unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
    Ok(load_manifest(path, root)?)
}

fn read_wavs(paths: &[(PathBuf, String)]) -> Result<Vec<AudioClip>, CliError> {
    let results: Vec<_> = paths.par_iter().map(|(p, id)| read_wav(p, id.clone())).collect();
    let mut clips = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(c) => clips.push(c),
            Err(e) => errors.push(e.to_string()),
        }
    }
    if !errors.is_empty() {
        return Err(CliError::Data(format!("{} unreadable audio file(s):\n  {}", errors.len(), errors.join("\n  "))));
    }
    Ok(clips)
}

/// WAV files directly inside `dir`, sorted by name.
fn list_wavs(dir: &Path) -> Result<Vec<(PathBuf, String)>, CliError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            out.push((path, name));
        }
    }
    out.sort_by(|a, b| a.1.cmp(&b.1));
    Ok(out)
}

/// Loads audio for every record, or generates the synthetic dataset.
pub(crate) fn load_dataset(cfg: &ExperimentConfig) -> Result<Loaded, CliError> {
    if let Some(spec) = &cfg.dataset.synthetic {
        let d = gen_synthetic_dataset(spec)?;
        return Ok(Loaded {
            manifest: d.manifest,
            clips: d.clips,
            distractors: d.distractors,
        });
    }
    let manifest = load_manifest_of(cfg)?;
    let paths: Vec<_> = manifest.records.iter().map(|r| (manifest.audio_path(r), r.clip_id.clone())).collect();
    let clips = read_wavs(&paths)?;
    let distractors = match &cfg.dataset.distractor_dir {
        Some(dir) => read_wavs(&list_wavs(dir)?)?,
        None => Vec::new(),
    };
    Ok(Loaded {
        manifest,
        clips,
        distractors,
    })
}

pub(crate) fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// `path` joined with `clip_id`, refusing ids that would escape `path`.
pub(crate) fn join_clip(path: &Path, clip_id: &str) -> Result<PathBuf, CliError> {
    let rel = Path::new(clip_id);
    if rel.is_absolute() || rel.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return Err(CliError::Data(format!("clip id `{clip_id}` is not a relative path inside the dataset")));
    }
    Ok(path.join(rel))
}
