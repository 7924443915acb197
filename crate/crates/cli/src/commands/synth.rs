use std::path::PathBuf;

use rayon::prelude::*;
use sednoise_core::dataset::{gen_synthetic_dataset, write_manifest, write_wav};
use sednoise_core::AudioClip;

use super::{create_dir, join_clip, Options};
use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub manifest: PathBuf,
    pub audio_dir: PathBuf,
    pub distractor_dir: PathBuf,
    pub clips: usize,
    pub distractors: usize,
}

pub(crate) fn write_clips(dir: &std::path::Path, clips: &[AudioClip]) -> Result<(), CliError> {
    create_dir(dir)?;
    clips
        .par_iter()
        .map(|c| {
            let path = join_clip(dir, &c.clip_id)?;
            if let Some(parent) = path.parent() {
                create_dir(parent)?;
            }
            write_wav(&path, c).map_err(CliError::from)
        })
        .collect()
}

/// Writes the configured synthetic dataset as WAV files plus a manifest under
/// `<output_dir>/data`, ready to be used as a `dataset.manifest`.
pub fn cmd_synth(cfg: &ExperimentConfig, opts: &Options) -> Result<SynthSummary, CliError> {
    let spec = cfg
        .dataset
        .synthetic
        .as_ref()
        .ok_or_else(|| CliError::Config("synth-data needs `dataset.synthetic`".into()))?;
    let mut data = gen_synthetic_dataset(spec)?;
    let root = cfg.output_dir.join("data");
    let audio_dir = root.join("audio");
    let distractor_dir = root.join("distractors");
    opts.install(|| write_clips(&audio_dir, &data.clips).and_then(|()| write_clips(&distractor_dir, &data.distractors)))??;
    data.manifest.audio_root = audio_dir.clone();
    let manifest = root.join("manifest.csv");
    write_manifest(&data.manifest, &manifest)?;
    Ok(SynthSummary {
        manifest,
        audio_dir,
        distractor_dir,
        clips: data.clips.len(),
        distractors: data.distractors.len(),
    })
}
