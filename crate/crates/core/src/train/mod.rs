//! Training loop, clip-level prediction and multi-seed experiments.

mod experiment;
mod predict;
mod split;
mod standardize;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, Origin, Subset};
use crate::features::FeatureError;
use crate::losses::{LossConfig, LossError};
use crate::nn::{NetworkSpec, NnError};

pub use experiment::{ci95_halfwidth, run_experiment, write_reports_csv, ExperimentData, ExperimentError, RunOutcome, RunReport};
pub use predict::{aggregate_geometric, evaluate, predict_clip, Model, PatchClassifier};
pub use split::stratified_val_split;
pub use standardize::Standardizer;
pub use trainer::{train, EpochRecord, History, Trained};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("validation split: {0}")]
    Split(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (loss family `{family}`)")]
    NonFiniteLoss { epoch: usize, batch: usize, family: String },
    #[error("at epoch {epoch}, batch {batch}: {source}")]
    NonFiniteGradient {
        epoch: usize,
        batch: usize,
        #[source]
        source: NnError,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl TrainError {
    /// True for numeric aborts (as opposed to bad input or config).
    pub fn is_numeric(&self) -> bool {
        matches!(self, TrainError::NonFiniteLoss { .. } | TrainError::NonFiniteGradient { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub plateau_window: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub subset: Subset,
    pub network: NetworkSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            initial_lr: 0.001,
            plateau_window: 5,
            patience: 15,
            val_fraction: 0.15,
            max_epochs: 200,
            seed: 0,
            loss: LossConfig::cce(),
            subset: Subset::All,
            network: NetworkSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 1 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(TrainError::Config(format!("val_fraction must be in (0, 1), got {}", self.val_fraction)));
        }
        if self.max_epochs == 0 || self.plateau_window == 0 || self.patience == 0 {
            return Err(TrainError::Config("max_epochs, plateau_window and patience must be positive".into()));
        }
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return Err(TrainError::Config(format!("initial_lr must be finite and >= 0, got {}", self.initial_lr)));
        }
        self.loss.validate()?;
        self.network.validate()?;
        Ok(())
    }
}

/// Log-mel patches of one clip, each `n_mels * frames` values, band-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatures {
    pub clip_id: String,
    pub label: usize,
    pub origin: Origin,
    pub patches: Vec<Vec<f32>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_recipe() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.plateau_window, c.patience), (64, 5, 15));
        assert_eq!((c.initial_lr, c.val_fraction), (0.001, 0.15));
        c.validate().unwrap();
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let c: TrainConfig = serde_json::from_str(r#"{"batch_size": 32, "loss": {"family": "soft", "beta": 0.3}}"#).unwrap();
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.loss, LossConfig::soft(0.3));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"batchsize": 32}"#).is_err());
        let bad = TrainConfig {
            val_fraction: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
    }
}
