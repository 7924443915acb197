use std::path::{Path, PathBuf};

use sednoise_core::dataset::write_manifest;
use sednoise_core::noise::{inject_noise, noise_report, Injected, NoiseReport, NoiseType};
use sednoise_core::{DatasetManifest, Origin};

use super::synth::write_clips;
use super::{load_dataset, write_file, Loaded, Options};
use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct InjectSummary {
    pub manifest: PathBuf,
    pub provenance: PathBuf,
    pub noisy_records: usize,
    /// `None` when the dataset has no noisy-origin records.
    pub report: Option<NoiseReport>,
}

/// Applies the configured noise to a loaded dataset and returns the corrupted
/// manifest alongside the injection result.
pub(crate) fn corrupt(cfg: &ExperimentConfig, data: &Loaded) -> Result<(DatasetManifest, Injected), CliError> {
    let spec = cfg
        .noise
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs a `noise` section".into()))?;
    let m = &data.manifest;
    let injected = inject_noise(&data.clips, &m.records, spec, &data.distractors, m.n_classes())?;
    let mut records = injected.records.clone();
    // Replaced or extended audio no longer matches the recorded duration.
    for (r, c) in records.iter_mut().zip(&injected.clips) {
        let changed = injected
            .log
            .get(&r.clip_id)
            .is_some_and(|p| matches!(p.noise_type, NoiseType::IncorrectOov | NoiseType::DensityNoise));
        if changed && r.duration.is_some() {
            r.duration = Some(c.duration());
        }
    }
    let manifest = DatasetManifest::new(records, m.class_names.clone(), m.audio_root.clone())?;
    Ok((manifest, injected))
}

/// Writes `provenance.csv`, `noise_report.csv` and `noise_report.txt`.
pub(crate) fn write_noise_logs(dir: &Path, injected: &Injected) -> Result<Option<NoiseReport>, CliError> {
    let mut buf = Vec::new();
    injected.log.write_csv(&mut buf)?;
    write_file(&dir.join("provenance.csv"), buf)?;
    if injected.log.is_empty() {
        return Ok(None);
    }
    let report = noise_report(&injected.log)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_file(&dir.join("noise_report.csv"), buf)?;
    write_file(&dir.join("noise_report.txt"), report.to_string())?;
    Ok(Some(report))
}

/// Corrupts the noisy-origin part of the dataset and writes the result under
/// `<output_dir>/noisy`: audio, manifest, provenance log and noise report.
pub fn cmd_inject(cfg: &ExperimentConfig, opts: &Options) -> Result<InjectSummary, CliError> {
    if cfg.noise.is_none() {
        return Err(CliError::Config("inject-noise needs a `noise` section".into()));
    }
    let out = cfg.output_dir.join("noisy");
    let audio_dir = out.join("audio");
    let data = opts.install(|| load_dataset(cfg))??;
    if cfg.dataset.manifest.is_some() && same_dir(&data.manifest.audio_root, &audio_dir) {
        return Err(CliError::Config(format!(
            "output audio dir {} is the input audio dir; inputs are never overwritten",
            audio_dir.display()
        )));
    }
    let (mut manifest, injected) = corrupt(cfg, &data)?;
    opts.install(|| write_clips(&audio_dir, &injected.clips))??;
    manifest.audio_root = audio_dir;
    let manifest_path = out.join("manifest.csv");
    write_manifest(&manifest, &manifest_path)?;
    let report = write_noise_logs(&out, &injected)?;
    Ok(InjectSummary {
        manifest: manifest_path,
        provenance: out.join("provenance.csv"),
        noisy_records: manifest.records.iter().filter(|r| r.origin == Origin::Noisy).count(),
        report,
    })
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => a == b,
    }
}
