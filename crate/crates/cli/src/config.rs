//! The JSON experiment config.
//!
//! Relative paths are resolved against the directory of the config file.
//! Unknown keys are rejected in every section; the accepted shape is
//! published as a JSON Schema in [`SCHEMA`].

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use sednoise_core::dataset::SyntheticSpec;
use sednoise_core::features::{FeatureConfig, Window};
use sednoise_core::{LossConfig, LossFamily, NetworkSpec, NoiseSpec, Subset, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA: &str = include_str!("../schema/experiment-config.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub features: FeatureSection,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub train: TrainSection,
    pub output_dir: PathBuf,
}

/// Either a CSV manifest with audio, or parameters for a synthetic dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub manifest: Option<PathBuf>,
    /// Defaults to the manifest's directory.
    pub audio_root: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    /// WAV files used as out-of-vocabulary material by noise injection.
    pub distractor_dir: Option<PathBuf>,
}

/// Overrides on top of the standard front end scaled to the dataset's
/// sample rate (see [`FeatureConfig::for_sample_rate`]).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub sample_rate: Option<u32>,
    pub fft_size: Option<usize>,
    pub hop: Option<usize>,
    pub window: Option<Window>,
    pub n_mels: Option<usize>,
    pub fmin: Option<f64>,
    pub fmax: Option<f64>,
    pub log_floor: Option<f64>,
    pub patch_seconds: Option<f64>,
}

impl FeatureSection {
    pub fn resolve(&self, default_rate: u32) -> FeatureConfig {
        let mut c = FeatureConfig::for_sample_rate(self.sample_rate.unwrap_or(default_rate));
        if let Some(v) = self.fft_size {
            c.fft_size = v;
            if self.hop.is_none() {
                c.hop = v / 2;
            }
        }
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { c.$f = v; })*};
        }
        set!(hop, window, n_mels, fmin, fmax, log_floor, patch_seconds);
        c
    }
}

/// Training recipe plus the experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub plateau_window: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub max_epochs: usize,
    /// Run `i` of every cell uses seed `seed + i`.
    pub seed: u64,
    pub n_runs: usize,
    pub subsets: Vec<Subset>,
    pub losses: Vec<LossConfig>,
    pub network: NetworkSpec,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            batch_size: t.batch_size,
            initial_lr: t.initial_lr,
            plateau_window: t.plateau_window,
            patience: t.patience,
            val_fraction: t.val_fraction,
            max_epochs: t.max_epochs,
            seed: t.seed,
            n_runs: 7,
            subsets: vec![Subset::All],
            losses: vec![LossConfig::cce()],
            network: t.network,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, subset: Subset, loss: LossConfig) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            initial_lr: self.initial_lr,
            plateau_window: self.plateau_window,
            patience: self.patience,
            val_fraction: self.val_fraction,
            max_epochs: self.max_epochs,
            seed: self.seed,
            loss,
            subset,
            network: self.network.clone(),
        }
    }

    /// Cells to run, subset-major. Robust losses are not run on the clean
    /// subset, which has no noisy labels to be robust against.
    pub fn grid(&self) -> Vec<(Subset, LossConfig)> {
        self.subsets
            .iter()
            .flat_map(|&s| self.losses.iter().map(move |&l| (s, l)))
            .filter(|&(s, l)| is_cell(s, &l))
            .collect()
    }
}

pub fn is_cell(subset: Subset, loss: &LossConfig) -> bool {
    subset != Subset::Clean || loss.family == LossFamily::Cce
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    /// Parses and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_json(&text, base).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parses and validates `text`, resolving relative paths against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let d = &mut cfg.dataset;
        for p in [&mut d.manifest, &mut d.audio_root, &mut d.distractor_dir].into_iter().flatten() {
            resolve(base, p);
        }
        resolve(base, &mut cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let d = &self.dataset;
        match (&d.manifest, &d.synthetic) {
            (Some(_), Some(_)) => return bad("dataset: give either `manifest` or `synthetic`, not both".into()),
            (None, None) => return bad("dataset: one of `manifest` or `synthetic` is required".into()),
            (None, Some(_)) if d.audio_root.is_some() => {
                return bad("dataset: `audio_root` only applies to a manifest".into());
            }
            _ => {}
        }
        let features = self.features();
        features.validate()?;
        if let Some(s) = &d.synthetic {
            if s.sample_rate != features.sample_rate {
                return bad(format!(
                    "features.sample_rate {} differs from the synthetic dataset's {}",
                    features.sample_rate, s.sample_rate
                ));
            }
        }
        if let Some(n) = &self.noise {
            n.validate()?;
            if d.manifest.is_some() && d.distractor_dir.is_none() && n.needs_pool() {
                return bad("noise: out-of-vocabulary and density noise need `dataset.distractor_dir`".into());
            }
        }
        let t = &self.train;
        if t.n_runs < 2 {
            return bad(format!("train.n_runs must be >= 2 for a confidence interval, got {}", t.n_runs));
        }
        if t.subsets.is_empty() || t.losses.is_empty() {
            return bad("train.subsets and train.losses must be non-empty".into());
        }
        if t.subsets.iter().collect::<HashSet<_>>().len() != t.subsets.len() {
            return bad("train.subsets has duplicates".into());
        }
        let mut tags = HashSet::new();
        for l in &t.losses {
            if !tags.insert(l.tag()) {
                return bad(format!("train.losses lists `{}` twice", l.tag()));
            }
        }
        if t.grid().is_empty() {
            return bad("train: every (subset, loss) pair is excluded; the clean subset only runs cce".into());
        }
        for &(s, l) in &t.grid() {
            t.train_config(s, l).validate()?;
        }
        let (min_h, min_w) = t.network.min_input();
        if features.n_mels < min_h || features.patch_frames() < min_w {
            return bad(format!(
                "network pooling needs patches of at least {min_h}x{min_w}, features give {}x{}",
                features.n_mels,
                features.patch_frames()
            ));
        }
        Ok(())
    }

    /// Sample rate of the dataset as configured, before feature overrides.
    pub fn dataset_rate(&self) -> u32 {
        self.dataset
            .synthetic
            .as_ref()
            .map_or(FeatureConfig::default().sample_rate, |s| s.sample_rate)
    }

    pub fn features(&self) -> FeatureConfig {
        self.features.resolve(self.dataset_rate())
    }
}
