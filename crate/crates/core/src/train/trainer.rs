use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, ClipFeatures, Model, Standardizer, TrainConfig, TrainError};
use crate::dataset::Origin;
use crate::losses::selective_batch_loss;
use crate::nn::{Adam, AdamConfig, EarlyStopper, Mode, Network, NnError, PlateauHalver, StopDecision, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn val_accuracies(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_accuracy).collect()
    }

    /// CSV with header `epoch,train_loss,val_accuracy,learning_rate`.
    pub fn write_csv(&self, out: impl Write) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.epochs {
            w.serialize(e)?;
        }
        if self.epochs.is_empty() {
            w.write_record(["epoch", "train_loss", "val_accuracy", "learning_rate"])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    /// Weights from the epoch with the best validation accuracy.
    pub model: Model,
    pub history: History,
    /// 1-based.
    pub best_epoch: usize,
}

struct PatchSet {
    values: Vec<f32>,
    labels: Vec<usize>,
    origins: Vec<Origin>,
    len: usize,
}

impl PatchSet {
    fn new(clips: &[ClipFeatures], patch_len: usize) -> Result<Self, TrainError> {
        let mut s = PatchSet {
            values: Vec::new(),
            labels: Vec::new(),
            origins: Vec::new(),
            len: patch_len,
        };
        for c in clips {
            for p in &c.patches {
                if p.len() != patch_len {
                    return Err(TrainError::Argument(format!(
                        "clip `{}` has a patch of {} values, expected {patch_len}",
                        c.clip_id,
                        p.len()
                    )));
                }
                s.values.extend_from_slice(p);
                s.labels.push(c.label);
                s.origins.push(c.origin);
            }
        }
        Ok(s)
    }

    fn count(&self) -> usize {
        self.labels.len()
    }

    fn gather(&self, idx: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(idx.len() * self.len);
        for &i in idx {
            out.extend_from_slice(&self.values[i * self.len..(i + 1) * self.len]);
        }
        out
    }
}

/// Trains `network` on `train_clips`, selecting the epoch by clip-level
/// accuracy on `val_clips`.
///
/// Standardization is fitted on the training patches and applied to both
/// sets. Patches are reshuffled every epoch; a trailing minibatch with fewer
/// than two patches is skipped because batch statistics need two samples.
pub fn train(
    mut network: Network<f32>,
    train_clips: &[ClipFeatures],
    val_clips: &[ClipFeatures],
    cfg: &TrainConfig,
) -> Result<Trained, TrainError> {
    cfg.validate()?;
    if val_clips.is_empty() {
        return Err(TrainError::Argument("validation set is empty".into()));
    }
    let [c, h, w] = network.input_shape();
    if c != 1 {
        return Err(TrainError::Argument(format!("network expects {c} input channels; patches have 1")));
    }
    let k = network.n_classes();
    if let Some(bad) = train_clips.iter().chain(val_clips).find(|x| x.label >= k) {
        return Err(TrainError::Argument(format!("clip `{}` has label {} but the network has {k} outputs", bad.clip_id, bad.label)));
    }

    let standardizer = Standardizer::fit(train_clips, h)?;
    let patches = PatchSet::new(&standardizer.apply_clips(train_clips), h * w)?;
    let val = standardizer.apply_clips(val_clips);
    if patches.count() < 2 {
        return Err(TrainError::Argument(format!("{} training patch(es); at least 2 are required", patches.count())));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(AdamConfig {
        learning_rate: cfg.initial_lr,
        ..AdamConfig::default()
    });
    let mut halver = PlateauHalver::new(cfg.plateau_window);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut history = History::default();
    let mut best = network.clone();
    let mut order: Vec<usize> = (0..patches.count()).collect();
    let family = cfg.loss.family.as_str();

    for epoch in 1..=cfg.max_epochs {
        let lr = adam.learning_rate();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut n_batches) = (0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let x = Tensor4::new([idx.len(), 1, h, w], patches.gather(idx))?;
            let y = network.forward(&x, Mode::Train)?;
            let preds: Vec<f64> = y.data().iter().map(|&v| v as f64).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| patches.labels[i]).collect();
            let origins: Vec<Origin> = idx.iter().map(|&i| patches.origins[i]).collect();
            let batch = selective_batch_loss(&preds, k, &labels, &origins, &cfg.loss)?;
            if !batch.total.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    family: family.into(),
                });
            }
            let g = Tensor4::new(y.shape(), batch.grad.iter().map(|&v| v as f32).collect())?;
            network.zero_grad();
            network.backward(&g)?;
            adam.step(&mut network.params_mut()).map_err(|e| match e {
                NnError::NonFinite(_) => TrainError::NonFiniteGradient { epoch, batch: b, source: e },
                other => other.into(),
            })?;
            loss_sum += batch.total;
            n_batches += 1;
        }

        let val_accuracy = evaluate(&network, &val)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_batches.max(1) as f64,
            val_accuracy,
            learning_rate: lr,
        });
        let decision = stopper.observe(val_accuracy);
        if stopper.improved_last() {
            best = network.clone();
        }
        adam.set_learning_rate(halver.observe(val_accuracy, lr));
        if decision == StopDecision::Stop {
            break;
        }
    }

    Ok(Trained {
        model: Model {
            network: best,
            standardizer,
        },
        best_epoch: stopper.best_epoch().unwrap_or(1),
        history,
    })
}
