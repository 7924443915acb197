use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{FeatureConfig, FeatureError};
use crate::dataset::AudioClip;

/// One-sided power spectrogram, stored frame-major (`n_frames x n_bins`).
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub values: Vec<f64>,
    pub n_bins: usize,
    pub n_frames: usize,
}

impl PowerSpectrogram {
    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.values[frame * self.n_bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.n_bins..(frame + 1) * self.n_bins]
    }
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Index into a signal of length `len` with reflection past the end.
/// Sample index read for position `i` of a clip of `len` samples, mirroring
/// past the end without repeating the edge sample.
pub fn reflect(i: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let j = i % period;
    if j < len {
        j
    } else {
        period - j
    }
}

/// Frame `t` covers samples `[t*hop, t*hop + fft_size)`; samples past the
/// end are reflected. There are `ceil(len / hop)` frames.
pub fn stft_power(clip: &AudioClip, cfg: &FeatureConfig) -> Result<PowerSpectrogram, FeatureError> {
    if clip.sample_rate != cfg.sample_rate {
        return Err(FeatureError::SampleRate {
            clip: clip.clip_id.clone(),
            expected: cfg.sample_rate,
            found: clip.sample_rate,
        });
    }
    if clip.samples.is_empty() {
        return Err(FeatureError::Empty(clip.clip_id.clone()));
    }
    let n = cfg.fft_size;
    let len = clip.samples.len();
    let n_bins = cfg.n_bins();
    let n_frames = cfg.n_frames(len);
    let window = hann_window(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);

    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut values = Vec::with_capacity(n_frames * n_bins);
    for t in 0..n_frames {
        let start = t * cfg.hop;
        for (i, (b, w)) in buf.iter_mut().zip(&window).enumerate() {
            let s = clip.samples[reflect(start + i, len)] as f64;
            *b = Complex::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        values.extend(buf[..n_bins].iter().map(|c| c.norm_sqr()));
    }
    Ok(PowerSpectrogram {
        values,
        n_bins,
        n_frames,
    })
}
