//! Batch entry points behind the `sednoise` binary.
//!
//! Every command reads an [`ExperimentConfig`] and writes only below its
//! `output_dir`:
//!
//! ```text
//! features/      <clip_id>.logmel caches and the config.json they were built with
//! data/          synth-data: manifest.csv, audio/, distractors/
//! noisy/         inject-noise: manifest.csv, audio/, provenance.csv, noise_report.{csv,txt}
//! report.csv     one row per (subset, loss) cell
//! report.txt     the same cells laid out as a loss x subset table
//! runs/          <subset>__<loss>.{csv,json}: per-seed results of one cell
//! histories/     <subset>__<loss>_seed<k>.csv: per-epoch training curves
//! checkpoints/   <subset>__<loss>_seed<k>.ckpt: best-epoch weights
//! plots/         <subset>__<loss>.svg: validation accuracy per epoch and seed
//! ```

pub mod commands;
pub mod config;
pub mod svg;

use std::path::Path;

use sednoise_core::dataset::DatasetError;
use sednoise_core::features::FeatureError;
use sednoise_core::noise::NoiseError;
use sednoise_core::train::ExperimentError;
use sednoise_core::TrainError;
use thiserror::Error;

pub use commands::{cmd_features, cmd_inject, cmd_report, cmd_run, cmd_synth, Options};
pub use config::{ExperimentConfig, SCHEMA};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric abort: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<NoiseError> for CliError {
    fn from(e: NoiseError) -> Self {
        match e {
            NoiseError::Spec(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Loss(_) => CliError::Config(e.to_string()),
            e if e.is_numeric() => CliError::Numeric(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        let msg = e.to_string();
        match CliError::from(e.source) {
            CliError::Config(_) => CliError::Config(msg),
            CliError::Data(_) => CliError::Data(msg),
            CliError::Numeric(_) => CliError::Numeric(msg),
        }
    }
}
