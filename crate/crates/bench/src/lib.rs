//! Deterministic inputs shared by the benchmarks.

use sednoise_core::nn::Tensor4;
use sednoise_core::AudioClip;

/// A two-tone clip of `seconds` at `sample_rate`.
pub fn tone_clip(seconds: f64, sample_rate: u32) -> AudioClip {
    let n = (seconds * sample_rate as f64) as usize;
    let sr = sample_rate as f32;
    let samples = (0..n)
        .map(|i| {
            let t = i as f32 / sr;
            0.4 * (2.0 * std::f32::consts::PI * 440.0 * t).sin() + 0.2 * (2.0 * std::f32::consts::PI * 3000.0 * t).sin()
        })
        .collect();
    AudioClip::new("bench.wav", samples, sample_rate).expect("non-empty clip")
}

/// A batch of smooth pseudo-random patches in roughly [-1, 1].
pub fn patch_batch(batch: usize, h: usize, w: usize) -> Tensor4<f32> {
    Tensor4::from_fn([batch, 1, h, w], |i| ((i as f32) * 0.618_034).sin())
}

/// Softmax-like rows: each sums to one and favours `i % k`.
pub fn prob_rows(batch: usize, k: usize) -> (Vec<f64>, Vec<usize>) {
    let mut preds = Vec::with_capacity(batch * k);
    for i in 0..batch {
        let raw: Vec<f64> = (0..k).map(|j| if j == i % k { 3.0 } else { 1.0 + (i * j % 7) as f64 * 0.1 }).collect();
        let s: f64 = raw.iter().sum();
        preds.extend(raw.iter().map(|v| v / s));
    }
    let labels = (0..batch).map(|i| (i * 7 + 3) % k).collect();
    (preds, labels)
}
