//! Training toolkit for sound event classification with noisy labels.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! - [`dataset`]: CSV manifests, training subsets, WAV IO and a seeded
//!   synthetic dataset generator.
//! - [`features`]: STFT power, HTK mel filterbank, log-mel matrices and
//!   fixed-length patches that inherit the clip label.
//! - [`noise`]: synthetic label-noise injection following an
//!   incorrect/incomplete, in-/out-of-vocabulary taxonomy, with a provenance
//!   log for oracle evaluation.
//! - [`nn`]: a small CPU layer toolkit (conv, batch norm, pooling, dense,
//!   softmax) with analytic backward passes, Adam, and the plateau/early-stop
//!   schedule.
//! - [`losses`]: categorical cross-entropy, soft bootstrapping, Lq and loss
//!   masking, with selective application by data origin.
//! - [`gradcheck`]: central finite-difference checks used by the test suites.
//! - [`train`]: the training loop, geometric-mean clip aggregation and the
//!   multi-seed experiment runner.
//!
//! ```text
//! WAV -> log-mel -> patches -> standardize -> CNN -> patch softmax -> clip geometric mean
//! ```

pub mod dataset;
pub mod features;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod noise;
pub mod train;

pub use dataset::{
    gen_synthetic_dataset, load_manifest, select_subset, AudioClip, DatasetError, DatasetManifest,
    LabelRecord, Origin, Split, Subset, SyntheticDataset, SyntheticSpec,
};
pub use features::{
    extract_logmel, patch_sample_span, patchify, FeatureConfig, FeatureError, LogMelMatrix, LogMelPatch,
};
pub use losses::{LossConfig, LossError, LossFamily};
pub use nn::{build_baseline, build_network, Mode, Network, NetworkSpec, NnError, Tensor4};
pub use noise::{inject_noise, noise_report, NoiseError, NoiseSpec, NoiseType, ProvenanceLog};
pub use train::{
    evaluate, predict_clip, run_experiment, stratified_val_split, train, ClipFeatures, ExperimentData,
    Model, PatchClassifier, RunReport, TrainConfig, TrainError,
};
