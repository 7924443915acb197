//! Seeded synthetic stand-in for a sound event dataset.
//!
//! Class `k` belongs to one of three parametric families (harmonic tone,
//! band-pass noise, amplitude-modulated band-pass noise) at a class-specific
//! frequency. The out-of-vocabulary distractor pool uses two families no class
//! uses: log sweeps and decaying click trains.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AudioClip, DatasetError, DatasetManifest, LabelRecord, Origin, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub clips_per_class: usize,
    pub clean_fraction: f64,
    pub sample_rate: u32,
    pub seed: u64,
    /// Clean test clips per class, on top of `clips_per_class`.
    #[serde(default = "default_test_clips")]
    pub test_clips_per_class: usize,
    /// Size of the distractor pool; 0 means one per training clip of a class.
    #[serde(default)]
    pub distractor_count: usize,
    #[serde(default = "default_min_duration")]
    pub min_duration: f64,
    #[serde(default = "default_max_duration")]
    pub max_duration: f64,
}

fn default_test_clips() -> usize {
    10
}
fn default_min_duration() -> f64 {
    0.5
}
fn default_max_duration() -> f64 {
    6.0
}

impl SyntheticSpec {
    pub fn new(n_classes: usize, clips_per_class: usize, clean_fraction: f64, sample_rate: u32, seed: u64) -> Self {
        SyntheticSpec {
            n_classes,
            clips_per_class,
            clean_fraction,
            sample_rate,
            seed,
            test_clips_per_class: default_test_clips(),
            distractor_count: 0,
            min_duration: default_min_duration(),
            max_duration: default_max_duration(),
        }
    }

    pub fn clean_per_class(&self) -> usize {
        (self.clean_fraction * self.clips_per_class as f64).round() as usize
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let bad = |msg: String| Err(DatasetError::Argument(msg));
        if self.n_classes < 2 {
            return bad(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        if self.clips_per_class < 2 {
            return bad(format!("clips_per_class must be >= 2, got {}", self.clips_per_class));
        }
        if !(self.clean_fraction > 0.0 && self.clean_fraction < 1.0) {
            return bad(format!("clean_fraction must be in (0, 1), got {}", self.clean_fraction));
        }
        if self.sample_rate < 4000 {
            return bad(format!("sample_rate must be >= 4000 Hz, got {}", self.sample_rate));
        }
        if !(self.min_duration > 0.0 && self.min_duration <= self.max_duration) {
            return bad(format!(
                "invalid duration range [{}, {}]",
                self.min_duration, self.max_duration
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    /// Train clips followed by test clips, in manifest order.
    pub clips: Vec<AudioClip>,
    pub manifest: DatasetManifest,
    /// Out-of-vocabulary clips, disjoint from every class family.
    pub distractors: Vec<AudioClip>,
}

#[derive(Debug, Clone, Copy)]
enum Family {
    Tone,
    Band,
    Modulated,
}

impl Family {
    fn of(class: usize) -> Family {
        match class % 3 {
            0 => Family::Tone,
            1 => Family::Band,
            _ => Family::Modulated,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Family::Tone => "tone",
            Family::Band => "band",
            Family::Modulated => "am",
        }
    }
}

/// Class-specific base frequency as a fraction of Nyquist.
fn class_center(class: usize, nyquist: f64) -> f64 {
    let step = (class / 3) as f64;
    nyquist * 0.03 * 1.5f64.powf(step).min(25.0)
}

pub fn gen_synthetic_dataset(spec: &SyntheticSpec) -> Result<SyntheticDataset, DatasetError> {
    spec.validate()?;
    let n_clean = spec.clean_per_class().clamp(0, spec.clips_per_class);

    let mut stream = 0u64;
    let mut next_rng = || {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        stream += 1;
        rng
    };

    let mut clips = Vec::new();
    let mut records = Vec::new();
    for class in 0..spec.n_classes {
        for i in 0..spec.clips_per_class {
            let id = format!("train_c{class:02}_{i:04}.wav");
            let clip = class_clip(&id, class, spec, &mut next_rng())?;
            let origin = if i < n_clean { Origin::Clean } else { Origin::Noisy };
            records.push(LabelRecord::new(&id, class, origin, Split::Train).with_duration(clip.duration()));
            clips.push(clip);
        }
    }
    for class in 0..spec.n_classes {
        for i in 0..spec.test_clips_per_class {
            let id = format!("test_c{class:02}_{i:04}.wav");
            let clip = class_clip(&id, class, spec, &mut next_rng())?;
            records.push(LabelRecord::new(&id, class, Origin::Clean, Split::Test).with_duration(clip.duration()));
            clips.push(clip);
        }
    }

    let n_distractors = if spec.distractor_count == 0 {
        spec.clips_per_class
    } else {
        spec.distractor_count
    };
    let distractors = (0..n_distractors)
        .map(|i| distractor_clip(&format!("oov_{i:04}.wav"), i, spec, &mut next_rng()))
        .collect::<Result<Vec<_>, _>>()?;

    let class_names = (0..spec.n_classes)
        .map(|k| format!("class{k:02}_{}", Family::of(k).name()))
        .collect();
    let manifest = DatasetManifest::new(records, class_names, "synthetic")?;
    Ok(SyntheticDataset {
        clips,
        manifest,
        distractors,
    })
}

fn draw_len(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> usize {
    let d = rng.gen_range(spec.min_duration..=spec.max_duration);
    ((d * spec.sample_rate as f64).round() as usize).max(1)
}

fn class_clip(id: &str, class: usize, spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<AudioClip, DatasetError> {
    let sr = spec.sample_rate as f64;
    let nyquist = sr / 2.0;
    let len = draw_len(spec, rng);
    let center = class_center(class, nyquist) * rng.gen_range(0.97..1.03);
    let mut x = match Family::of(class) {
        Family::Tone => {
            let mut out = vec![0.0; len];
            for h in 1..=4 {
                let f = center * h as f64;
                if f > 0.95 * nyquist {
                    break;
                }
                let phase = rng.gen_range(0.0..2.0 * PI);
                let amp = 1.0 / h as f64;
                for (n, o) in out.iter_mut().enumerate() {
                    *o += amp * (2.0 * PI * f * n as f64 / sr + phase).sin();
                }
            }
            out
        }
        Family::Band => bandpass(&white(len, rng), (center * 1.2).min(0.9 * nyquist), 4.0, sr),
        Family::Modulated => {
            let rate = 3.0 + (class / 3) as f64;
            let phase = rng.gen_range(0.0..2.0 * PI);
            let mut y = bandpass(&white(len, rng), center * 0.8, 2.0, sr);
            for (n, v) in y.iter_mut().enumerate() {
                *v *= 0.55 + 0.45 * (2.0 * PI * rate * n as f64 / sr + phase).sin();
            }
            y
        }
    };
    finish(&mut x, rng, sr);
    AudioClip::new(id, to_f32(&x), spec.sample_rate)
}

fn distractor_clip(id: &str, index: usize, spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<AudioClip, DatasetError> {
    let sr = spec.sample_rate as f64;
    let nyquist = sr / 2.0;
    let len = draw_len(spec, rng);
    let mut x = if index % 2 == 0 {
        // Log sweep across most of the band, either direction.
        let (mut f0, mut f1) = (0.05 * nyquist, 0.6 * nyquist);
        if rng.gen_bool(0.5) {
            std::mem::swap(&mut f0, &mut f1);
        }
        let dur = len as f64 / sr;
        let k = (f1 / f0).ln() / dur;
        (0..len)
            .map(|n| {
                let t = n as f64 / sr;
                (2.0 * PI * f0 * ((k * t).exp() - 1.0) / k).sin()
            })
            .collect()
    } else {
        let rate = rng.gen_range(5.0..15.0);
        let decay = rng.gen_range(200.0..600.0);
        let mut out = vec![0.0; len];
        let mut t = rng.gen_range(0.0..1.0 / rate);
        while ((t * sr) as usize) < len {
            let start = (t * sr) as usize;
            let amp = rng.gen_range(0.4..1.0);
            for (j, o) in out[start..].iter_mut().enumerate().take((0.05 * sr) as usize) {
                *o += amp * (-(j as f64) / sr * decay).exp() * rng.gen_range(-1.0..1.0);
            }
            t += rng.gen_range(0.5..1.5) / rate;
        }
        out
    };
    finish(&mut x, rng, sr);
    AudioClip::new(id, to_f32(&x), spec.sample_rate)
}

fn white(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Constant-peak-gain biquad band-pass.
fn bandpass(x: &[f64], f0: f64, q: f64, sr: f64) -> Vec<f64> {
    let w0 = 2.0 * PI * f0 / sr;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    x.iter()
        .map(|&x0| {
            let y0 = b0 * x0 + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = x0;
            y2 = y1;
            y1 = y0;
            y0
        })
        .collect()
}

/// Low background noise, 10 ms fades and a random peak level in [0.3, 0.9].
fn finish(x: &mut [f64], rng: &mut ChaCha8Rng, sr: f64) {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v /= peak);
    }
    for v in x.iter_mut() {
        *v += 0.03 * rng.gen_range(-1.0..1.0);
    }
    let fade = ((0.01 * sr) as usize).min(x.len() / 2);
    let n = x.len();
    for i in 0..fade {
        let g = i as f64 / fade as f64;
        x[i] *= g;
        x[n - 1 - i] *= g;
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let target = rng.gen_range(0.3..0.9);
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / peak);
    }
}

fn to_f32(x: &[f64]) -> Vec<f32> {
    x.iter().map(|&v| v as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        let mut s = SyntheticSpec::new(4, 50, 0.15, 16000, 7);
        s.test_clips_per_class = 2;
        s.distractor_count = 6;
        s
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = gen_synthetic_dataset(&small()).unwrap();
        let b = gen_synthetic_dataset(&small()).unwrap();
        assert_eq!(a, b);
        let mut other = small();
        other.seed = 8;
        assert_ne!(a.clips[0].samples, gen_synthetic_dataset(&other).unwrap().clips[0].samples);
    }

    #[test]
    fn clean_count_per_class() {
        let d = gen_synthetic_dataset(&small()).unwrap();
        for class in 0..4 {
            let clean = d
                .manifest
                .train_records()
                .filter(|r| r.class_index == class && r.origin == Origin::Clean)
                .count();
            assert_eq!(clean, 8);
        }
        assert_eq!(d.manifest.train_records().count(), 200);
        assert_eq!(d.manifest.test_records().count(), 8);
        assert_eq!(d.distractors.len(), 6);
    }

    #[test]
    fn clips_are_bounded_and_in_duration_range() {
        let d = gen_synthetic_dataset(&small()).unwrap();
        for c in d.clips.iter().chain(&d.distractors) {
            let dur = c.duration();
            assert!((0.5 - 1e-4..=6.0 + 1e-4).contains(&dur), "{} lasts {dur}", c.clip_id);
            assert!(c.samples.iter().all(|s| s.abs() <= 1.0 && s.is_finite()));
            assert!(c.rms() > 0.01);
        }
        assert!(d.clips.iter().any(|c| c.duration() < 2.0));
        assert!(d.clips.iter().any(|c| c.duration() > 4.0));
        for (clip, rec) in d.clips.iter().zip(&d.manifest.records) {
            assert_eq!(clip.clip_id, rec.clip_id);
        }
    }

    #[test]
    fn bad_arguments() {
        let mut s = small();
        s.n_classes = 1;
        assert!(gen_synthetic_dataset(&s).is_err());
        let mut s = small();
        s.clean_fraction = 1.0;
        assert!(gen_synthetic_dataset(&s).is_err());
        let mut s = small();
        s.clips_per_class = 0;
        assert!(gen_synthetic_dataset(&s).is_err());
        let mut s = small();
        s.sample_rate = 0;
        assert!(gen_synthetic_dataset(&s).is_err());
    }
}
