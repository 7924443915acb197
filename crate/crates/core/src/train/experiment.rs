use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{evaluate, stratified_val_split, train, ClipFeatures, History, Model, TrainConfig, TrainError};
use crate::dataset::{select_subset, AudioClip, DatasetManifest, LabelRecord};
use crate::features::{extract_logmel_with, mel_filterbank, patchify_frames, FeatureConfig, LogMelMatrix};
use crate::nn::build_network;

/// A manifest plus the patches of every clip it references.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub manifest: DatasetManifest,
    pub patches: HashMap<String, Vec<Vec<f32>>>,
    pub n_mels: usize,
    pub frames: usize,
}

impl ExperimentData {
    pub fn from_matrices(
        manifest: DatasetManifest,
        matrices: impl IntoIterator<Item = LogMelMatrix>,
        patch_frames: usize,
    ) -> Result<Self, TrainError> {
        let mut patches = HashMap::new();
        let mut n_mels = None;
        for m in matrices {
            if *n_mels.get_or_insert(m.n_mels) != m.n_mels {
                return Err(TrainError::Argument(format!("clip `{}` has {} bands, others have {}", m.clip_id, m.n_mels, n_mels.unwrap())));
            }
            let p: Vec<Vec<f32>> = patchify_frames(&m, 0, patch_frames).into_iter().map(|p| p.values).collect();
            patches.insert(m.clip_id.clone(), p);
        }
        Ok(ExperimentData {
            manifest,
            patches,
            n_mels: n_mels.ok_or_else(|| TrainError::Argument("no feature matrices given".into()))?,
            frames: patch_frames,
        })
    }

    /// Extracts log-mel features for `clips` in parallel.
    pub fn from_clips(manifest: DatasetManifest, clips: &[AudioClip], cfg: &FeatureConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let bank = mel_filterbank(cfg)?;
        let matrices = clips
            .par_iter()
            .map(|c| extract_logmel_with(c, cfg, &bank))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_matrices(manifest, matrices, cfg.patch_frames())
    }

    pub fn clips(&self, records: &[LabelRecord]) -> Result<Vec<ClipFeatures>, TrainError> {
        records
            .iter()
            .map(|r| {
                let patches = self
                    .patches
                    .get(&r.clip_id)
                    .ok_or_else(|| TrainError::Argument(format!("no features for clip `{}`", r.clip_id)))?;
                Ok(ClipFeatures {
                    clip_id: r.clip_id.clone(),
                    label: r.class_index,
                    origin: r.origin,
                    patches: patches.clone(),
                })
            })
            .collect()
    }

    pub fn test_clips(&self) -> Result<Vec<ClipFeatures>, TrainError> {
        let records: Vec<LabelRecord> = self.manifest.test_records().cloned().collect();
        self.clips(&records)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub accuracy: f64,
    pub best_epoch: usize,
    pub history: History,
    pub model: Model,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: TrainConfig,
    pub n_runs: usize,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub ci95_halfwidth: f64,
    pub runs: Vec<RunOutcome>,
}

impl RunReport {
    pub fn from_runs(config: TrainConfig, runs: Vec<RunOutcome>) -> Result<Self, TrainError> {
        let accuracies: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
        let ci = ci95_halfwidth(&accuracies)?;
        Ok(RunReport {
            config,
            n_runs: runs.len(),
            mean: accuracies.iter().sum::<f64>() / accuracies.len() as f64,
            ci95_halfwidth: ci,
            accuracies,
            runs,
        })
    }

    /// `mean±ci` in percent, e.g. `71.6±0.4`.
    pub fn cell(&self) -> String {
        format!("{:.1}±{:.1}", 100.0 * self.mean, 100.0 * self.ci95_halfwidth)
    }

    pub fn median(&self) -> f64 {
        let mut v = self.accuracies.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} on {}: {} ({} runs)", self.config.loss.label(), self.config.subset.as_str(), self.cell(), self.n_runs)
    }
}

/// Header `subset,loss,n_runs,mean,ci95_halfwidth,accuracies`; the per-run
/// accuracies are `;`-separated in seed order.
pub fn write_reports_csv<'a>(out: impl Write, reports: impl IntoIterator<Item = &'a RunReport>) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subset", "loss", "n_runs", "mean", "ci95_halfwidth", "accuracies"])?;
    for r in reports {
        let accs: Vec<String> = r.accuracies.iter().map(|a| format!("{a:.6}")).collect();
        w.write_record([
            r.config.subset.as_str().to_string(),
            r.config.loss.tag(),
            r.n_runs.to_string(),
            format!("{:.6}", r.mean),
            format!("{:.6}", r.ci95_halfwidth),
            accs.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `t(0.975, n-1) * s / sqrt(n)` with the sample standard deviation `s`.
pub fn ci95_halfwidth(values: &[f64]) -> Result<f64, TrainError> {
    let n = values.len();
    if n < 2 {
        return Err(TrainError::Argument(format!("a confidence interval needs at least 2 runs, got {n}")));
    }
    if values.iter().all(|&v| v == values[0]) {
        // The rounded mean would leave a spurious ~1e-16 spread.
        return Ok(0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let s = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| TrainError::Argument(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(t * s / (n as f64).sqrt())
}

#[derive(Debug)]
pub struct ExperimentError {
    /// Seed of the failing run, if a run had started.
    pub seed: Option<u64>,
    pub source: TrainError,
    /// Runs that finished before or alongside the failure, in seed order.
    pub partial: Vec<RunOutcome>,
}

impl fmt::Display for ExperimentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.seed {
            Some(s) => write!(f, "run with seed {s} failed after {} completed run(s): {}", self.partial.len(), self.source),
            None => write!(f, "experiment setup failed: {}", self.source),
        }
    }
}

impl std::error::Error for ExperimentError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

fn setup_error(source: impl Into<TrainError>) -> ExperimentError {
    ExperimentError {
        seed: None,
        source: source.into(),
        partial: Vec::new(),
    }
}

fn run_once(
    cfg: &TrainConfig,
    data: &ExperimentData,
    train_records: &[LabelRecord],
    test: &[ClipFeatures],
    seed: u64,
) -> Result<RunOutcome, TrainError> {
    let cfg = TrainConfig { seed, ..cfg.clone() };
    let (tr, va) = stratified_val_split(train_records, cfg.val_fraction, seed)?;
    let (tr, va) = (data.clips(&tr)?, data.clips(&va)?);
    let network = build_network(&cfg.network, data.n_mels, data.frames, data.manifest.n_classes(), seed)?;
    let trained = train(network, &tr, &va, &cfg)?;
    let accuracy = evaluate(&trained.model, test)?;
    Ok(RunOutcome {
        seed,
        accuracy,
        best_epoch: trained.best_epoch,
        history: trained.history,
        model: trained.model,
    })
}

/// Trains and evaluates `n_runs` models with seeds `cfg.seed ..`, in parallel.
pub fn run_experiment(cfg: &TrainConfig, data: &ExperimentData, n_runs: usize) -> Result<RunReport, ExperimentError> {
    if n_runs < 2 {
        return Err(setup_error(TrainError::Config(format!("n_runs must be >= 2, got {n_runs}"))));
    }
    cfg.validate().map_err(setup_error)?;
    let subset = select_subset(&data.manifest, cfg.subset).map_err(setup_error)?;
    let test = data.test_clips().map_err(setup_error)?;
    if test.is_empty() {
        return Err(setup_error(TrainError::Argument("manifest has no test clips".into())));
    }

    let results: Vec<Result<RunOutcome, TrainError>> = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| run_once(cfg, data, &subset.records, &test, cfg.seed + i))
        .collect();

    let mut runs = Vec::with_capacity(n_runs);
    let mut failure = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => runs.push(o),
            Err(e) if failure.is_none() => failure = Some((cfg.seed + i as u64, e)),
            Err(_) => {}
        }
    }
    if let Some((seed, source)) = failure {
        return Err(ExperimentError {
            seed: Some(seed),
            source,
            partial: runs,
        });
    }
    RunReport::from_runs(cfg.clone(), runs).map_err(setup_error)
}
