//! Log-mel front end: STFT power, HTK mel filterbank, log compression and
//! 2-second patches.

mod cache;
mod mel;
mod stft;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::AudioClip;

pub use cache::{read_cache, write_cache, CACHE_HEADER_BYTES};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, MelFilterbank};
pub use stft::{hann_window, reflect, stft_power, PowerSpectrogram};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid feature config: {0}")]
    Config(String),
    #[error("clip `{clip}` has sample rate {found} Hz but the config expects {expected} Hz")]
    SampleRate {
        clip: String,
        expected: u32,
        found: u32,
    },
    #[error("clip `{0}` is empty")]
    Empty(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt feature cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub window: Window,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
    pub patch_seconds: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate: 44_100,
            fft_size: 2048,
            hop: 1024,
            window: Window::Hann,
            n_mels: 96,
            fmin: 0.0,
            fmax: 22_050.0,
            log_floor: 1e-10,
            patch_seconds: 2.0,
        }
    }
}

impl FeatureConfig {
    /// Defaults scaled to another sample rate: same ~23 ms hop, full band.
    pub fn for_sample_rate(sample_rate: u32) -> Self {
        let fft_size = if sample_rate >= 32_000 { 2048 } else { 1024 };
        FeatureConfig {
            sample_rate,
            fft_size,
            hop: fft_size / 2,
            fmax: sample_rate as f64 / 2.0,
            ..FeatureConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |msg: String| Err(FeatureError::Config(msg));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.fft_size < 2 {
            return bad(format!("fft_size must be >= 2, got {}", self.fft_size));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return bad(format!("hop must be in [1, fft_size], got {}", self.hop));
        }
        if self.n_mels == 0 {
            return bad("n_mels must be >= 1".into());
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return bad(format!(
                "need 0 <= fmin < fmax <= {nyquist}, got fmin={} fmax={}",
                self.fmin, self.fmax
            ));
        }
        if !(self.log_floor > 0.0) {
            return bad(format!("log_floor must be positive, got {}", self.log_floor));
        }
        if !(self.patch_seconds > 0.0) || self.patch_frames() == 0 {
            return bad(format!("patch_seconds {} yields no frames", self.patch_seconds));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    pub fn patch_frames(&self) -> usize {
        (self.patch_seconds * self.frame_rate()).round() as usize
    }

    /// Frames produced for a clip of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }
}

/// `n_mels x n_frames` log-energies, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelMatrix {
    pub values: Vec<f32>,
    pub n_mels: usize,
    pub n_frames: usize,
    pub frame_rate: f64,
    pub clip_id: String,
}

impl LogMelMatrix {
    pub fn get(&self, band: usize, frame: usize) -> f32 {
        self.values[band * self.n_frames + frame]
    }
}

/// Fixed-size slice of a log-mel matrix carrying the clip label.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelPatch {
    /// `n_mels x frames`, row-major.
    pub values: Vec<f32>,
    pub n_mels: usize,
    pub frames: usize,
    pub clip_id: String,
    pub inherited_label: usize,
    pub patch_index: usize,
}

impl LogMelPatch {
    pub fn get(&self, band: usize, frame: usize) -> f32 {
        self.values[band * self.frames + frame]
    }
}

/// `ln(max(mel . power, log_floor))` for every band and frame.
pub fn extract_logmel(clip: &AudioClip, cfg: &FeatureConfig) -> Result<LogMelMatrix, FeatureError> {
    let bank = mel_filterbank(cfg)?;
    extract_logmel_with(clip, cfg, &bank)
}

/// Same as [`extract_logmel`] with a prebuilt filterbank.
pub fn extract_logmel_with(
    clip: &AudioClip,
    cfg: &FeatureConfig,
    bank: &MelFilterbank,
) -> Result<LogMelMatrix, FeatureError> {
    let power = stft_power(clip, cfg)?;
    let mel = bank.apply(&power);
    let floor = cfg.log_floor;
    let values = mel.iter().map(|&e| e.max(floor).ln() as f32).collect();
    Ok(LogMelMatrix {
        values,
        n_mels: bank.n_mels,
        n_frames: power.n_frames,
        frame_rate: cfg.frame_rate(),
        clip_id: clip.clip_id.clone(),
    })
}

/// Cuts a log-mel matrix into `cfg.patch_frames()`-wide patches.
///
/// Short matrices are tiled cyclically into a single patch; longer ones give
/// `floor(n_frames / patch_frames)` consecutive patches and the remainder is
/// dropped.
pub fn patchify(m: &LogMelMatrix, label: usize, cfg: &FeatureConfig) -> Vec<LogMelPatch> {
    let width = cfg.patch_frames().max(1);
    patchify_frames(m, label, width)
}

/// Sample positions read by the frames of patch `index` of a clip long enough
/// for regular patching. Positions past the clip end are mirrored by
/// [`reflect`].
pub fn patch_sample_span(cfg: &FeatureConfig, index: usize) -> Range<usize> {
    let p = cfg.patch_frames();
    let start = index * p * cfg.hop;
    start..start + (p.max(1) - 1) * cfg.hop + cfg.fft_size
}

pub fn patchify_frames(m: &LogMelMatrix, label: usize, width: usize) -> Vec<LogMelPatch> {
    let make = |index: usize, column: &dyn Fn(usize) -> usize| {
        let mut values = Vec::with_capacity(m.n_mels * width);
        for band in 0..m.n_mels {
            let row = &m.values[band * m.n_frames..(band + 1) * m.n_frames];
            values.extend((0..width).map(|t| row[column(t)]));
        }
        LogMelPatch {
            values,
            n_mels: m.n_mels,
            frames: width,
            clip_id: m.clip_id.clone(),
            inherited_label: label,
            patch_index: index,
        }
    };
    if m.n_frames < width {
        vec![make(0, &|t| t % m.n_frames)]
    } else {
        (0..m.n_frames / width)
            .map(|p| make(p, &|t| p * width + t))
            .collect()
    }
}
