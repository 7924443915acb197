use rayon::prelude::*;

use super::{ClipFeatures, Standardizer, TrainError};
use crate::nn::{Network, Tensor4};

const LOG_OFFSET: f64 = 1e-12;
const INFER_BATCH: usize = 64;

/// Anything that maps patches to class probabilities.
pub trait PatchClassifier: Sync {
    fn n_classes(&self) -> usize;

    /// One probability vector per patch.
    fn predict_patches(&self, patches: &[Vec<f32>]) -> Result<Vec<Vec<f64>>, TrainError>;
}

/// The network expects patches that are already standardized.
impl PatchClassifier for Network<f32> {
    fn n_classes(&self) -> usize {
        Network::n_classes(self)
    }

    fn predict_patches(&self, patches: &[Vec<f32>]) -> Result<Vec<Vec<f64>>, TrainError> {
        let [c, h, w] = self.input_shape();
        let k = Network::n_classes(self);
        let chunks: Vec<Vec<Vec<f64>>> = patches
            .par_chunks(INFER_BATCH)
            .map(|chunk| {
                let data: Vec<f32> = chunk.iter().flatten().copied().collect();
                let x = Tensor4::new([chunk.len(), c, h, w], data)?;
                let y = self.infer(&x)?;
                Ok(y.data().chunks(k).map(|r| r.iter().map(|&v| v as f64).collect()).collect())
            })
            .collect::<Result<_, TrainError>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }
}

/// A trained network bundled with its input standardization.
#[derive(Debug, Clone)]
pub struct Model {
    pub network: Network<f32>,
    pub standardizer: Standardizer,
}

impl PatchClassifier for Model {
    fn n_classes(&self) -> usize {
        self.network.n_classes()
    }

    fn predict_patches(&self, patches: &[Vec<f32>]) -> Result<Vec<Vec<f64>>, TrainError> {
        let std: Vec<Vec<f32>> = patches.iter().map(|p| self.standardizer.apply(p)).collect();
        self.network.predict_patches(&std)
    }
}

/// Renormalized per-class geometric mean of patch probabilities and its
/// argmax (lowest index on ties).
pub fn aggregate_geometric(patch_probs: &[Vec<f64>]) -> Result<(Vec<f64>, usize), TrainError> {
    let first = patch_probs
        .first()
        .ok_or_else(|| TrainError::Argument("cannot aggregate a clip with no patches".into()))?;
    let k = first.len();
    if k == 0 || patch_probs.iter().any(|p| p.len() != k) {
        return Err(TrainError::Argument("patch probability vectors differ in length".into()));
    }
    let n = patch_probs.len() as f64;
    let g: Vec<f64> = (0..k)
        .map(|c| (patch_probs.iter().map(|p| (p[c] + LOG_OFFSET).ln()).sum::<f64>() / n).exp())
        .collect();
    let total: f64 = g.iter().sum();
    let probs: Vec<f64> = g.iter().map(|v| v / total).collect();
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok((probs, best))
}

pub fn predict_clip(model: &impl PatchClassifier, patches: &[Vec<f32>]) -> Result<(Vec<f64>, usize), TrainError> {
    if patches.is_empty() {
        return Err(TrainError::Argument("clip has no patches".into()));
    }
    aggregate_geometric(&model.predict_patches(patches)?)
}

/// Fraction of clips whose aggregated argmax equals the label.
pub fn evaluate(model: &impl PatchClassifier, clips: &[ClipFeatures]) -> Result<f64, TrainError> {
    if clips.is_empty() {
        return Err(TrainError::Argument("empty evaluation set".into()));
    }
    // Predict all patches at once so inference batches stay full.
    let all: Vec<Vec<f32>> = clips.iter().flat_map(|c| c.patches.iter().cloned()).collect();
    let probs = model.predict_patches(&all)?;
    let mut offset = 0;
    let mut correct = 0usize;
    for clip in clips {
        let n = clip.patches.len();
        let (_, pred) = aggregate_geometric(&probs[offset..offset + n])
            .map_err(|_| TrainError::Argument(format!("clip `{}` has no patches", clip.clip_id)))?;
        offset += n;
        if pred == clip.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / clips.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Origin;

    /// Returns a fixed vector per patch, keyed by the patch's first value.
    struct Lookup(Vec<Vec<f64>>);

    impl PatchClassifier for Lookup {
        fn n_classes(&self) -> usize {
            self.0[0].len()
        }

        fn predict_patches(&self, patches: &[Vec<f32>]) -> Result<Vec<Vec<f64>>, TrainError> {
            Ok(patches.iter().map(|p| self.0[p[0] as usize].clone()).collect())
        }
    }

    fn clip(label: usize, keys: &[usize]) -> ClipFeatures {
        ClipFeatures {
            clip_id: format!("clip{label}"),
            label,
            origin: Origin::Clean,
            patches: keys.iter().map(|&k| vec![k as f32]).collect(),
        }
    }

    #[test]
    fn single_patch_is_identity() {
        let p = vec![0.2, 0.5, 0.3];
        let (g, c) = aggregate_geometric(&[p.clone()]).unwrap();
        assert_eq!(c, 1);
        for (a, b) in g.iter().zip(&p) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn symmetric_pair_is_uniform_and_ties_go_low() {
        let (g, c) = aggregate_geometric(&[vec![0.8, 0.2], vec![0.2, 0.8]]).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
        assert_eq!(c, 0);
    }

    #[test]
    fn three_patches_match_direct_log_mean() {
        let ps = vec![vec![0.1, 0.6, 0.3], vec![0.7, 0.2, 0.1], vec![0.25, 0.25, 0.5]];
        let (g, _) = aggregate_geometric(&ps).unwrap();
        let raw: Vec<f64> = (0..3)
            .map(|k| ((ps[0][k] + 1e-12) * (ps[1][k] + 1e-12) * (ps[2][k] + 1e-12)).cbrt())
            .collect();
        let s: f64 = raw.iter().sum();
        for k in 0..3 {
            assert!((g[k] - raw[k] / s).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(aggregate_geometric(&[]), Err(TrainError::Argument(_))));
        let m = Lookup(vec![vec![1.0, 0.0]]);
        assert!(predict_clip(&m, &[]).is_err());
        assert!(evaluate(&m, &[]).is_err());
    }

    #[test]
    fn hand_built_accuracy() {
        let m = Lookup(vec![vec![0.9, 0.1], vec![0.1, 0.9], vec![0.6, 0.4]]);
        let clips = vec![clip(0, &[0]), clip(1, &[1, 2]), clip(1, &[0, 2])];
        assert!((evaluate(&m, &clips).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_model_scores_class_zero_prevalence() {
        let m = Lookup(vec![vec![0.25; 4]]);
        let clips: Vec<_> = (0..20).map(|i| clip(i % 4, &[0, 0])).collect();
        assert_eq!(evaluate(&m, &clips).unwrap(), 0.25);
    }
}
