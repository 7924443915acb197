//! Synthetic label-noise injection.
//!
//! Each noisy-origin record independently draws one [`NoiseType`] from a
//! [`NoiseSpec`]. The draw for record `i` comes from a ChaCha stream keyed
//! by `(seed, i)`, so results do not depend on processing order. The
//! [`ProvenanceLog`] records what was done to every record so that
//! noise-handling methods can be scored against ground truth.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{rms, AudioClip, LabelRecord, Origin};

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("invalid noise spec: {0}")]
    Spec(String),
    #[error("distractor pool: {0}")]
    Pool(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("provenance log is empty")]
    EmptyLog,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseType {
    Correct,
    IncorrectOov,
    IncompleteOov,
    IncorrectIv,
    IncompleteIv,
    DensityNoise,
}

impl NoiseType {
    pub const ALL: [NoiseType; 6] = [
        NoiseType::Correct,
        NoiseType::IncorrectOov,
        NoiseType::IncompleteOov,
        NoiseType::IncorrectIv,
        NoiseType::IncompleteIv,
        NoiseType::DensityNoise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseType::Correct => "correct",
            NoiseType::IncorrectOov => "incorrect_oov",
            NoiseType::IncompleteOov => "incomplete_oov",
            NoiseType::IncorrectIv => "incorrect_iv",
            NoiseType::IncompleteIv => "incomplete_iv",
            NoiseType::DensityNoise => "density",
        }
    }

    /// Row label in the distribution table.
    pub fn title(self) -> &'static str {
        match self {
            NoiseType::Correct => "Correct",
            NoiseType::IncorrectOov => "Incorrect/OOV",
            NoiseType::IncompleteOov => "Incomplete/OOV",
            NoiseType::IncorrectIv => "Incorrect/IV",
            NoiseType::IncompleteIv => "Incomplete/IV",
            NoiseType::DensityNoise => "Label density",
        }
    }
}

impl FromStr for NoiseType {
    type Err = NoiseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NoiseType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| NoiseError::Input(format!("unknown noise type `{s}`")))
    }
}

impl fmt::Display for NoiseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub p_incorrect_oov: f64,
    #[serde(default)]
    pub p_incomplete_oov: f64,
    #[serde(default)]
    pub p_incorrect_iv: f64,
    #[serde(default)]
    pub p_incomplete_iv: f64,
    #[serde(default)]
    pub p_density: f64,
    pub seed: u64,
    /// Minimum length of the distractor tail appended for density noise.
    /// Two patch lengths plus a margin for frame overhang.
    #[serde(default = "default_density_seconds")]
    pub density_seconds: f64,
}

fn default_density_seconds() -> f64 {
    4.5
}

/// Peak level after mixing two sources.
pub const MIX_PEAK: f32 = 0.9;

impl NoiseSpec {
    pub fn none(seed: u64) -> Self {
        NoiseSpec {
            p_incorrect_oov: 0.0,
            p_incomplete_oov: 0.0,
            p_incorrect_iv: 0.0,
            p_incomplete_iv: 0.0,
            p_density: 0.0,
            seed,
            density_seconds: default_density_seconds(),
        }
    }

    /// Measured distribution of the noisy portion of FSDnoisy18k, with
    /// density noise as its own 1% category instead of the ambiguous one.
    pub fn fsdnoisy18k(seed: u64) -> Self {
        NoiseSpec {
            p_incorrect_oov: 0.38,
            p_incomplete_oov: 0.10,
            p_incorrect_iv: 0.06,
            p_incomplete_iv: 0.05,
            p_density: 0.01,
            ..NoiseSpec::none(seed)
        }
    }

    /// Probability of each type, `Correct` being the remainder.
    pub fn probability(&self, t: NoiseType) -> f64 {
        match t {
            NoiseType::Correct => 1.0 - self.noisy_total(),
            NoiseType::IncorrectOov => self.p_incorrect_oov,
            NoiseType::IncompleteOov => self.p_incomplete_oov,
            NoiseType::IncorrectIv => self.p_incorrect_iv,
            NoiseType::IncompleteIv => self.p_incomplete_iv,
            NoiseType::DensityNoise => self.p_density,
        }
    }

    /// Probability that a noisy-origin label is corrupted at all.
    pub fn noisy_total(&self) -> f64 {
        self.p_incorrect_oov + self.p_incomplete_oov + self.p_incorrect_iv + self.p_incomplete_iv + self.p_density
    }

    /// Whether some noise type draws from the out-of-vocabulary pool.
    pub fn needs_pool(&self) -> bool {
        self.p_incorrect_oov > 0.0 || self.p_incomplete_oov > 0.0 || self.p_density > 0.0
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        for t in &NoiseType::ALL[1..] {
            let p = self.probability(*t);
            if !(0.0..=1.0).contains(&p) {
                return Err(NoiseError::Spec(format!("p({t}) = {p} is outside [0, 1]")));
            }
        }
        let total = self.noisy_total();
        if total > 1.0 + 1e-12 {
            return Err(NoiseError::Spec(format!("probabilities sum to {total} > 1")));
        }
        if !(self.density_seconds > 0.0) {
            return Err(NoiseError::Spec(format!(
                "density_seconds must be positive, got {}",
                self.density_seconds
            )));
        }
        Ok(())
    }

    fn draw(&self, u: f64) -> NoiseType {
        let mut acc = 0.0;
        for t in &NoiseType::ALL[1..] {
            acc += self.probability(*t);
            if u < acc {
                return *t;
            }
        }
        NoiseType::Correct
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub noise_type: NoiseType,
    /// In-vocabulary class actually present; `None` when the audio was
    /// replaced by out-of-vocabulary material.
    pub original_label: Option<usize>,
    pub source_clip_ids: Vec<String>,
}

/// Per-clip record of the injected noise, in record order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProvenanceLog {
    pub entries: Vec<(String, Provenance)>,
}

impl ProvenanceLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, clip_id: &str) -> Option<&Provenance> {
        self.entries.iter().find(|(id, _)| id == clip_id).map(|(_, p)| p)
    }

    /// CSV with header `clip_id,noise_type,original_label,source_clip_ids`;
    /// source ids are joined with `;`.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), NoiseError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["clip_id", "noise_type", "original_label", "source_clip_ids"])?;
        for (id, p) in &self.entries {
            w.write_record([
                id.as_str(),
                p.noise_type.as_str(),
                &p.original_label.map(|l| l.to_string()).unwrap_or_default(),
                &p.source_clip_ids.join(";"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NoiseError> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: io::Read>(reader: R) -> Result<Self, NoiseError> {
        let mut r = csv::Reader::from_reader(reader);
        let mut entries = Vec::new();
        for row in r.records() {
            let row = row?;
            let field = |i: usize| row.get(i).unwrap_or("");
            let original_label = match field(2) {
                "" => None,
                v => Some(
                    v.parse()
                        .map_err(|_| NoiseError::Input(format!("bad original_label `{v}`")))?,
                ),
            };
            let sources = match field(3) {
                "" => Vec::new(),
                v => v.split(';').map(str::to_string).collect(),
            };
            entries.push((
                field(0).to_string(),
                Provenance {
                    noise_type: field(1).parse()?,
                    original_label,
                    source_clip_ids: sources,
                },
            ));
        }
        Ok(ProvenanceLog { entries })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Injected {
    pub clips: Vec<AudioClip>,
    pub records: Vec<LabelRecord>,
    pub log: ProvenanceLog,
}

/// Corrupts noisy-origin records according to `spec`.
///
/// `clips[i]` must hold the audio of `records[i]`. Clean-origin records pass
/// through untouched and are not logged. Labels stay in `[0, n_classes)`.
pub fn inject_noise(
    clips: &[AudioClip],
    records: &[LabelRecord],
    spec: &NoiseSpec,
    distractor_pool: &[AudioClip],
    n_classes: usize,
) -> Result<Injected, NoiseError> {
    spec.validate()?;
    if clips.len() != records.len() {
        return Err(NoiseError::Input(format!(
            "{} clips for {} records",
            clips.len(),
            records.len()
        )));
    }
    for (c, r) in clips.iter().zip(records) {
        if c.clip_id != r.clip_id {
            return Err(NoiseError::Input(format!("clip `{}` paired with record `{}`", c.clip_id, r.clip_id)));
        }
        if r.class_index >= n_classes {
            return Err(NoiseError::Input(format!("record `{}` has label {} >= {n_classes}", r.clip_id, r.class_index)));
        }
    }
    let any_noisy = records.iter().any(|r| r.origin == Origin::Noisy);
    if any_noisy && spec.needs_pool() && distractor_pool.is_empty() {
        return Err(NoiseError::Pool("empty, but the spec asks for out-of-vocabulary or density noise".into()));
    }
    if spec.p_incorrect_iv > 0.0 && n_classes < 2 {
        return Err(NoiseError::Spec("incorrect/IV noise needs at least two classes".into()));
    }
    if let Some(c) = distractor_pool.iter().find(|d| clips.first().is_some_and(|c0| d.sample_rate != c0.sample_rate)) {
        return Err(NoiseError::Pool(format!("distractor `{}` has a different sample rate", c.clip_id)));
    }

    let mut out_clips = clips.to_vec();
    let mut out_records = records.to_vec();
    let mut log = ProvenanceLog::default();

    for (i, (clip, record)) in clips.iter().zip(records).enumerate() {
        if record.origin != Origin::Noisy {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        let noise_type = spec.draw(rng.gen::<f64>());
        let label = record.class_index;
        let mut prov = Provenance {
            noise_type,
            original_label: Some(label),
            source_clip_ids: Vec::new(),
        };

        match noise_type {
            NoiseType::Correct => {}
            NoiseType::IncorrectOov => {
                let d = &distractor_pool[rng.gen_range(0..distractor_pool.len())];
                out_clips[i].samples = d.samples.clone();
                prov.original_label = None;
                prov.source_clip_ids.push(d.clip_id.clone());
            }
            NoiseType::IncompleteOov => {
                let d = &distractor_pool[rng.gen_range(0..distractor_pool.len())];
                out_clips[i].samples = mix(&clip.samples, &d.samples);
                prov.source_clip_ids.push(d.clip_id.clone());
            }
            NoiseType::IncorrectIv => {
                let r = rng.gen_range(0..n_classes - 1);
                out_records[i].class_index = if r < label { r } else { r + 1 };
            }
            NoiseType::IncompleteIv => {
                let partners: Vec<usize> = (0..records.len())
                    .filter(|&j| records[j].class_index != label)
                    .collect();
                if partners.is_empty() {
                    return Err(NoiseError::Input(format!(
                        "no clip of another class to mix into `{}`",
                        clip.clip_id
                    )));
                }
                let j = partners[rng.gen_range(0..partners.len())];
                out_clips[i].samples = mix(&clip.samples, &clips[j].samples);
                prov.source_clip_ids.push(clips[j].clip_id.clone());
            }
            NoiseType::DensityNoise => {
                let need = (spec.density_seconds * clip.sample_rate as f64).ceil() as usize;
                let mut tail: Vec<f32> = Vec::with_capacity(need);
                while tail.len() < need {
                    let d = &distractor_pool[rng.gen_range(0..distractor_pool.len())];
                    tail.extend_from_slice(&d.samples);
                    prov.source_clip_ids.push(d.clip_id.clone());
                }
                tail.truncate(need);
                let mut samples = clip.samples.clone();
                samples.extend_from_slice(&tail);
                out_clips[i].samples = samples;
            }
        }
        log.entries.push((record.clip_id.clone(), prov));
    }

    Ok(Injected {
        clips: out_clips,
        records: out_records,
        log,
    })
}

/// Equal-RMS sum of `base` and `other` (looped to `base`'s length), peak
/// normalized to [`MIX_PEAK`].
pub fn mix(base: &[f32], other: &[f32]) -> Vec<f32> {
    let looped: Vec<f32> = (0..base.len()).map(|n| other[n % other.len()]).collect();
    let (rb, ro) = (rms(base), rms(&looped));
    let gain = if ro > 0.0 { (rb / ro) as f32 } else { 0.0 };
    let mut out: Vec<f32> = base.iter().zip(&looped).map(|(a, b)| a + gain * b).collect();
    let peak = out.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = MIX_PEAK / peak;
        out.iter_mut().for_each(|v| *v *= g);
    }
    out
}

/// Counts and fractions per noise type.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseReport {
    pub counts: BTreeMap<NoiseType, usize>,
    pub total: usize,
}

impl NoiseReport {
    pub fn count(&self, t: NoiseType) -> usize {
        self.counts.get(&t).copied().unwrap_or(0)
    }

    pub fn fraction(&self, t: NoiseType) -> f64 {
        self.count(t) as f64 / self.total as f64
    }

    /// Fraction of records with any kind of noise.
    pub fn overall(&self) -> f64 {
        1.0 - self.fraction(NoiseType::Correct)
    }

    /// CSV with header `noise_type,count,fraction`.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), NoiseError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["noise_type", "count", "fraction"])?;
        for t in NoiseType::ALL {
            w.write_record([t.as_str(), &self.count(t).to_string(), &format!("{:.6}", self.fraction(t))])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for NoiseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:>7} {:>7}", "Label noise type", "Amount", "Clips")?;
        writeln!(f, "{:<16} {:>6.1}% {:>7}", "Overall", 100.0 * self.overall(), self.total - self.count(NoiseType::Correct))?;
        for t in NoiseType::ALL {
            writeln!(f, "{:<16} {:>6.1}% {:>7}", t.title(), 100.0 * self.fraction(t), self.count(t))?;
        }
        Ok(())
    }
}

pub fn noise_report(log: &ProvenanceLog) -> Result<NoiseReport, NoiseError> {
    if log.is_empty() {
        return Err(NoiseError::EmptyLog);
    }
    let mut counts: BTreeMap<NoiseType, usize> = NoiseType::ALL.iter().map(|&t| (t, 0)).collect();
    for (_, p) in &log.entries {
        *counts.entry(p.noise_type).or_default() += 1;
    }
    Ok(NoiseReport {
        counts,
        total: log.len(),
    })
}

/// Sample offset where the appended distractor tail starts in a
/// density-noise clip, from the original clips keyed by id.
pub fn density_tail_start(log: &ProvenanceLog, originals: &HashMap<&str, &AudioClip>, clip_id: &str) -> Option<usize> {
    if log.get(clip_id)?.noise_type != NoiseType::DensityNoise {
        return None;
    }
    originals.get(clip_id).map(|c| c.samples.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;

    fn data(n: usize, k: usize) -> (Vec<AudioClip>, Vec<LabelRecord>, Vec<AudioClip>) {
        let clips = (0..n)
            .map(|i| {
                let s = (0..800).map(|t| ((t * (i + 1)) as f32 * 0.01).sin() * 0.5).collect();
                AudioClip::new(format!("c{i}"), s, 8000).unwrap()
            })
            .collect();
        let records = (0..n)
            .map(|i| LabelRecord::new(format!("c{i}"), i % k, Origin::Noisy, Split::Train))
            .collect();
        let pool = (0..3)
            .map(|i| AudioClip::new(format!("d{i}"), vec![0.2 * (i as f32 + 1.0); 4000], 8000).unwrap())
            .collect();
        (clips, records, pool)
    }

    #[test]
    fn zero_spec_is_identity() {
        let (clips, records, pool) = data(50, 4);
        let out = inject_noise(&clips, &records, &NoiseSpec::none(3), &pool, 4).unwrap();
        assert_eq!(out.clips, clips);
        assert_eq!(out.records, records);
        assert_eq!(out.log.len(), 50);
        assert!(out.log.entries.iter().all(|(_, p)| p.noise_type == NoiseType::Correct));
        let report = noise_report(&out.log).unwrap();
        assert_eq!(report.fraction(NoiseType::Correct), 1.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let (clips, records, pool) = data(200, 5);
        let spec = NoiseSpec::fsdnoisy18k(11);
        let a = inject_noise(&clips, &records, &spec, &pool, 5).unwrap();
        let b = inject_noise(&clips, &records, &spec, &pool, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clean_records_are_untouched() {
        let (clips, mut records, pool) = data(100, 3);
        for r in records.iter_mut().step_by(2) {
            r.origin = Origin::Clean;
        }
        let spec = NoiseSpec {
            p_incorrect_iv: 0.5,
            p_incorrect_oov: 0.5,
            ..NoiseSpec::none(2)
        };
        let out = inject_noise(&clips, &records, &spec, &pool, 3).unwrap();
        for i in (0..100).step_by(2) {
            assert_eq!(out.clips[i], clips[i]);
            assert_eq!(out.records[i], records[i]);
        }
        assert_eq!(out.log.len(), 50);
    }

    #[test]
    fn incorrect_iv_never_keeps_label() {
        let (clips, records, pool) = data(300, 4);
        let spec = NoiseSpec {
            p_incorrect_iv: 1.0,
            ..NoiseSpec::none(5)
        };
        let out = inject_noise(&clips, &records, &spec, &pool, 4).unwrap();
        for (before, after) in records.iter().zip(&out.records) {
            assert_ne!(before.class_index, after.class_index);
            assert!(after.class_index < 4);
        }
        // Every other class gets picked.
        let moved_from_zero: std::collections::HashSet<_> = records
            .iter()
            .zip(&out.records)
            .filter(|(b, _)| b.class_index == 0)
            .map(|(_, a)| a.class_index)
            .collect();
        assert_eq!(moved_from_zero.len(), 3);
    }

    #[test]
    fn oov_and_mixing_rules() {
        let (clips, records, pool) = data(60, 3);
        let spec = NoiseSpec {
            p_incorrect_oov: 0.3,
            p_incomplete_oov: 0.3,
            p_incomplete_iv: 0.4,
            ..NoiseSpec::none(9)
        };
        let out = inject_noise(&clips, &records, &spec, &pool, 3).unwrap();
        for (i, (id, p)) in out.log.entries.iter().enumerate() {
            assert_eq!(*id, records[i].clip_id);
            assert_eq!(out.records[i].class_index, records[i].class_index);
            match p.noise_type {
                NoiseType::IncorrectOov => {
                    assert_eq!(p.original_label, None);
                    let d = pool.iter().find(|d| d.clip_id == p.source_clip_ids[0]).unwrap();
                    assert_eq!(out.clips[i].samples, d.samples);
                }
                NoiseType::IncompleteOov | NoiseType::IncompleteIv => {
                    assert_eq!(out.clips[i].samples.len(), clips[i].samples.len());
                    let peak = out.clips[i].samples.iter().fold(0.0f32, |m, v| m.max(v.abs()));
                    assert!((peak - MIX_PEAK).abs() < 1e-6);
                    if p.noise_type == NoiseType::IncompleteIv {
                        let src = records.iter().find(|r| r.clip_id == p.source_clip_ids[0]).unwrap();
                        assert_ne!(src.class_index, records[i].class_index);
                    }
                }
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn density_appends_long_tail() {
        let (clips, records, pool) = data(20, 2);
        let spec = NoiseSpec {
            p_density: 1.0,
            ..NoiseSpec::none(1)
        };
        let out = inject_noise(&clips, &records, &spec, &pool, 2).unwrap();
        let originals: HashMap<&str, &AudioClip> = clips.iter().map(|c| (c.clip_id.as_str(), c)).collect();
        for (i, c) in out.clips.iter().enumerate() {
            let start = density_tail_start(&out.log, &originals, &c.clip_id).unwrap();
            assert_eq!(start, 800);
            assert_eq!(c.samples.len() - start, (4.5f64 * 8000.0).ceil() as usize);
            assert_eq!(&c.samples[..start], &clips[i].samples[..]);
        }
    }

    #[test]
    fn spec_and_pool_errors() {
        let (clips, records, pool) = data(10, 2);
        let bad = NoiseSpec {
            p_incorrect_oov: 0.6,
            p_incorrect_iv: 0.5,
            ..NoiseSpec::none(0)
        };
        assert!(matches!(inject_noise(&clips, &records, &bad, &pool, 2), Err(NoiseError::Spec(_))));
        let oov = NoiseSpec {
            p_incorrect_oov: 0.1,
            ..NoiseSpec::none(0)
        };
        assert!(matches!(inject_noise(&clips, &records, &oov, &[], 2), Err(NoiseError::Pool(_))));
    }

    #[test]
    fn report_counts() {
        let mut log = ProvenanceLog::default();
        for i in 0..10 {
            let t = if i < 6 { NoiseType::Correct } else { NoiseType::IncorrectIv };
            log.entries.push((
                format!("c{i}"),
                Provenance {
                    noise_type: t,
                    original_label: Some(0),
                    source_clip_ids: vec![],
                },
            ));
        }
        let r = noise_report(&log).unwrap();
        assert_eq!(r.fraction(NoiseType::Correct), 0.6);
        assert_eq!(r.fraction(NoiseType::IncorrectIv), 0.4);
        let sum: f64 = NoiseType::ALL.iter().map(|&t| r.fraction(t)).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(matches!(noise_report(&ProvenanceLog::default()), Err(NoiseError::EmptyLog)));
        assert!(r.to_string().contains("Incorrect/IV"));
    }

    #[test]
    fn provenance_csv_roundtrip() {
        let (clips, records, pool) = data(40, 3);
        let out = inject_noise(&clips, &records, &NoiseSpec::fsdnoisy18k(4), &pool, 3).unwrap();
        let mut buf = Vec::new();
        out.log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("clip_id,noise_type,original_label,source_clip_ids\n"));
        assert_eq!(text.lines().count(), 41);
        assert_eq!(ProvenanceLog::read_csv(&buf[..]).unwrap(), out.log);
    }
}
