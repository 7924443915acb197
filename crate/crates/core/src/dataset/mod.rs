//! Dataset manifests, audio clips and training subsets.

mod manifest;
mod subset;
mod synth;
mod wav;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use manifest::{load_manifest, write_manifest};
pub use subset::select_subset;
pub use synth::{gen_synthetic_dataset, SyntheticDataset, SyntheticSpec};
pub use wav::{read_wav, wav_duration, write_wav};

/// Clip, train and test counts of the released FSDnoisy18k splits.
pub const FSDNOISY18K_TOTAL_CLIPS: usize = 18_532;
pub const FSDNOISY18K_TRAIN_CLIPS: usize = 17_585;
pub const FSDNOISY18K_TEST_CLIPS: usize = 947;
pub const FSDNOISY18K_CLASSES: usize = 20;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest is missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: invalid value `{value}` in column `{column}`")]
    InvalidValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("duplicate clip id `{0}`")]
    Duplicate(String),
    #[error("inconsistent manifest: {0}")]
    Consistency(String),
    #[error("subset {0} is empty")]
    EmptySubset(Subset),
    #[error("clip `{0}` has no duration; noisy_small needs durations or a noisy_small column")]
    MissingDuration(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("wav file {path}: {reason}")]
    Wav { path: PathBuf, reason: String },
    #[error("count mismatch for {what}: expected {expected}, found {found}")]
    Count {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

/// Whether a training label was human-verified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Clean,
    Noisy,
}

impl FromStr for Origin {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clean" | "1" => Ok(Origin::Clean),
            "noisy" | "0" => Ok(Origin::Noisy),
            other => Err(DatasetError::Argument(format!("unknown origin flag `{other}`"))),
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Clean => "clean",
            Origin::Noisy => "noisy",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(DatasetError::Argument(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Training subsets compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    All,
    Noisy,
    NoisySmall,
    Clean,
}

impl Subset {
    pub const ALL: [Subset; 4] = [Subset::All, Subset::Noisy, Subset::NoisySmall, Subset::Clean];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::Noisy => "noisy",
            Subset::NoisySmall => "noisy_small",
            Subset::Clean => "clean",
        }
    }
}

impl FromStr for Subset {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Subset::All),
            "noisy" => Ok(Subset::Noisy),
            "noisy_small" => Ok(Subset::NoisySmall),
            "clean" => Ok(Subset::Clean),
            other => Err(DatasetError::Argument(format!("unknown subset `{other}`"))),
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One singly-labeled clip of the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub clip_id: String,
    pub class_index: usize,
    pub origin: Origin,
    pub split: Split,
    /// Explicit noisy_small membership when the manifest ships that column.
    pub noisy_small: Option<bool>,
    /// Clip duration in seconds, when known.
    pub duration: Option<f64>,
}

impl LabelRecord {
    pub fn new(clip_id: impl Into<String>, class_index: usize, origin: Origin, split: Split) -> Self {
        LabelRecord {
            clip_id: clip_id.into(),
            class_index,
            origin,
            split,
            noisy_small: None,
            duration: None,
        }
    }

    pub fn with_duration(mut self, seconds: f64) -> Self {
        self.duration = Some(seconds);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<LabelRecord>,
    pub class_names: Vec<String>,
    pub audio_root: PathBuf,
}

impl DatasetManifest {
    /// Builds a manifest and checks its invariants (unique ids, labels in
    /// range, test records clean).
    pub fn new(
        records: Vec<LabelRecord>,
        class_names: Vec<String>,
        audio_root: impl Into<PathBuf>,
    ) -> Result<Self, DatasetError> {
        let manifest = DatasetManifest {
            records,
            class_names,
            audio_root: audio_root.into(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = std::collections::HashSet::with_capacity(self.records.len());
        let k = self.class_names.len();
        for r in &self.records {
            if !seen.insert(r.clip_id.as_str()) {
                return Err(DatasetError::Duplicate(r.clip_id.clone()));
            }
            if r.class_index >= k {
                return Err(DatasetError::Consistency(format!(
                    "clip `{}` has class index {} but only {k} classes are named",
                    r.clip_id, r.class_index
                )));
            }
            if r.split == Split::Test && r.origin != Origin::Clean {
                return Err(DatasetError::Consistency(format!(
                    "test clip `{}` is not from the clean portion",
                    r.clip_id
                )));
            }
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn train_records(&self) -> impl Iterator<Item = &LabelRecord> {
        self.records.iter().filter(|r| r.split == Split::Train)
    }

    pub fn test_records(&self) -> impl Iterator<Item = &LabelRecord> {
        self.records.iter().filter(|r| r.split == Split::Test)
    }

    pub fn audio_path(&self, record: &LabelRecord) -> PathBuf {
        self.audio_root.join(&record.clip_id)
    }

    /// Fills missing durations by reading the WAV headers under `audio_root`.
    pub fn fill_durations_from_audio(&mut self) -> Result<(), DatasetError> {
        for i in 0..self.records.len() {
            if self.records[i].duration.is_none() {
                let path = self.audio_path(&self.records[i]);
                self.records[i].duration = Some(wav_duration(&path)?);
            }
        }
        Ok(())
    }

    /// Checks the released FSDnoisy18k totals.
    pub fn validate_fsdnoisy18k_counts(&self) -> Result<(), DatasetError> {
        let checks = [
            ("total clips", FSDNOISY18K_TOTAL_CLIPS, self.records.len()),
            ("train clips", FSDNOISY18K_TRAIN_CLIPS, self.train_records().count()),
            ("test clips", FSDNOISY18K_TEST_CLIPS, self.test_records().count()),
            ("classes", FSDNOISY18K_CLASSES, self.n_classes()),
        ];
        for (what, expected, found) in checks {
            if expected != found {
                return Err(DatasetError::Count {
                    what,
                    expected,
                    found,
                });
            }
        }
        Ok(())
    }
}

/// A mono waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub clip_id: String,
}

impl AudioClip {
    pub fn new(
        clip_id: impl Into<String>,
        samples: Vec<f32>,
        sample_rate: u32,
    ) -> Result<Self, DatasetError> {
        let clip_id = clip_id.into();
        if samples.is_empty() {
            return Err(DatasetError::Argument(format!("clip `{clip_id}` has no samples")));
        }
        if sample_rate == 0 {
            return Err(DatasetError::Argument(format!("clip `{clip_id}` has zero sample rate")));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
            clip_id,
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }
}

pub(crate) fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let energy: f64 = samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
    (energy / samples.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_rejects_noisy_test_record() {
        let records = vec![LabelRecord::new("a.wav", 0, Origin::Noisy, Split::Test)];
        let err = DatasetManifest::new(records, vec!["x".into()], ".").unwrap_err();
        assert!(matches!(err, DatasetError::Consistency(_)));
    }

    #[test]
    fn audio_clip_rejects_empty_and_zero_rate() {
        assert!(AudioClip::new("a", vec![], 16000).is_err());
        assert!(AudioClip::new("a", vec![0.0], 0).is_err());
        let clip = AudioClip::new("a", vec![0.0; 8000], 16000).unwrap();
        assert_eq!(clip.duration(), 0.5);
    }

    #[test]
    fn origin_parsing() {
        assert_eq!("1".parse::<Origin>().unwrap(), Origin::Clean);
        assert_eq!("noisy".parse::<Origin>().unwrap(), Origin::Noisy);
        assert!("maybe".parse::<Origin>().is_err());
    }

    #[test]
    fn fsdnoisy18k_totals_add_up() {
        assert_eq!(FSDNOISY18K_TRAIN_CLIPS + FSDNOISY18K_TEST_CLIPS, FSDNOISY18K_TOTAL_CLIPS);
    }
}
