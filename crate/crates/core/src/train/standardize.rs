use super::{ClipFeatures, TrainError};

/// Per-band affine normalization fitted on training patches.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    /// Bands with (near-)zero spread get unit scale so constant inputs pass
    /// through centred rather than blowing up.
    pub const MIN_STD: f64 = 1e-6;

    pub fn fit(clips: &[ClipFeatures], n_mels: usize) -> Result<Self, TrainError> {
        let mut sum = vec![0.0f64; n_mels];
        let mut count = 0usize;
        let mut frames = None;
        for p in clips.iter().flat_map(|c| &c.patches) {
            if n_mels == 0 || p.len() % n_mels != 0 {
                return Err(TrainError::Argument(format!("patch of {} values is not a multiple of {n_mels} bands", p.len())));
            }
            let f = p.len() / n_mels;
            frames.get_or_insert(f);
            for (band, row) in p.chunks(f).enumerate() {
                sum[band] += row.iter().map(|&v| v as f64).sum::<f64>();
            }
            count += f;
        }
        let Some(f) = frames else {
            return Err(TrainError::Argument("no training patches to fit standardization on".into()));
        };
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0f64; n_mels];
        for p in clips.iter().flat_map(|c| &c.patches) {
            for (band, row) in p.chunks(f).enumerate() {
                sq[band] += row.iter().map(|&v| (v as f64 - mean[band]).powi(2)).sum::<f64>();
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / count as f64).sqrt();
                if sd < Self::MIN_STD {
                    1.0
                } else {
                    sd as f32
                }
            })
            .collect();
        Ok(Standardizer {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, patch: &[f32]) -> Vec<f32> {
        let f = patch.len() / self.mean.len();
        patch
            .chunks(f)
            .zip(self.mean.iter().zip(&self.std))
            .flat_map(|(row, (&m, &s))| row.iter().map(move |&v| (v - m) / s))
            .collect()
    }

    pub fn apply_clips(&self, clips: &[ClipFeatures]) -> Vec<ClipFeatures> {
        clips
            .iter()
            .map(|c| ClipFeatures {
                patches: c.patches.iter().map(|p| self.apply(p)).collect(),
                ..c.clone()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Origin;

    #[test]
    fn training_patches_become_unit_normal_per_band() {
        let n_mels = 6;
        let frames = 10;
        let clips: Vec<ClipFeatures> = (0..12)
            .map(|c| ClipFeatures {
                clip_id: format!("c{c}"),
                label: 0,
                origin: Origin::Clean,
                patches: (0..3)
                    .map(|p| {
                        (0..n_mels * frames)
                            .map(|i| {
                                let band = i / frames;
                                -20.0 + band as f32 * 3.0 + ((c * 31 + p * 7 + i) as f32 * 0.7).sin() * (band as f32 + 0.5)
                            })
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        let s = Standardizer::fit(&clips, n_mels).unwrap();
        let out = s.apply_clips(&clips);
        for band in 0..n_mels {
            let vals: Vec<f64> = out
                .iter()
                .flat_map(|c| &c.patches)
                .flat_map(|p| p[band * frames..(band + 1) * frames].iter().map(|&v| v as f64))
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!(m.abs() < 1e-3 && (sd - 1.0).abs() < 1e-2, "band {band}: {m} {sd}");
        }
    }

    #[test]
    fn constant_band_is_centred() {
        let clips = vec![ClipFeatures {
            clip_id: "a".into(),
            label: 0,
            origin: Origin::Clean,
            patches: vec![vec![-23.0; 8]],
        }];
        let s = Standardizer::fit(&clips, 2).unwrap();
        assert_eq!(s.std, vec![1.0, 1.0]);
        assert!(s.apply(&clips[0].patches[0]).iter().all(|&v| v == 0.0));
    }
}
