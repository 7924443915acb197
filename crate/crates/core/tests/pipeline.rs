use sednoise_core::nn::{load_checkpoint, save_checkpoint, Checkpoint};
use sednoise_core::train::Standardizer;
use sednoise_core::{
    evaluate, gen_synthetic_dataset, inject_noise, run_experiment, ExperimentData, FeatureConfig, LossConfig, Model,
    NetworkSpec, NoiseSpec, Origin, SyntheticSpec, TrainConfig,
};

fn small_data(noise: Option<NoiseSpec>) -> ExperimentData {
    let mut spec = SyntheticSpec::new(3, 16, 0.5, 8000, 7);
    spec.test_clips_per_class = 6;
    spec.max_duration = 2.0;
    let ds = gen_synthetic_dataset(&spec).unwrap();
    let fc = FeatureConfig {
        n_mels: 16,
        patch_seconds: 0.5,
        ..FeatureConfig::for_sample_rate(8000)
    };
    let mut manifest = ds.manifest.clone();
    let mut clips = ds.clips.clone();
    if let Some(ns) = noise {
        let out = inject_noise(&ds.clips, &ds.manifest.records, &ns, &ds.distractors, 3).unwrap();
        manifest.records = out.records;
        clips = out.clips;
    }
    ExperimentData::from_clips(manifest, &clips, &fc).unwrap()
}

fn small_config(loss: LossConfig) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        max_epochs: 12,
        loss,
        network: NetworkSpec {
            widths: vec![4, 8],
            kernel: 3,
            pools: vec![(2, 2), (2, 2)],
        },
        ..TrainConfig::default()
    }
}

#[test]
fn a_separable_task_is_learned_and_runs_repeat_exactly() {
    let data = small_data(None);
    let cfg = small_config(LossConfig::cce());
    let a = run_experiment(&cfg, &data, 2).unwrap();
    assert!(a.accuracies.iter().all(|x| (0.0..=1.0).contains(x)));
    assert!(a.mean > 0.6, "mean accuracy {} is near chance (1/3)", a.mean);
    for r in &a.runs {
        assert!(r.history.len() <= cfg.max_epochs);
        assert!(r.best_epoch >= 1 && r.best_epoch <= r.history.len());
    }

    let b = run_experiment(&cfg, &data, 2).unwrap();
    assert_eq!(a.accuracies, b.accuracies);
    for (x, y) in a.runs.iter().zip(&b.runs) {
        assert_eq!(x.history, y.history);
    }
}

#[test]
fn checkpoints_reproduce_test_accuracy() {
    let data = small_data(None);
    let report = run_experiment(&small_config(LossConfig::cce()), &data, 2).unwrap();
    let run = &report.runs[0];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(
        &path,
        &Checkpoint {
            network: run.model.network.clone(),
            epoch: run.best_epoch as u32,
            band_mean: run.model.standardizer.mean.clone(),
            band_std: run.model.standardizer.std.clone(),
        },
    )
    .unwrap();
    let ck = load_checkpoint(&path).unwrap();
    let model = Model {
        network: ck.network,
        standardizer: Standardizer {
            mean: ck.band_mean,
            std: ck.band_std,
        },
    };
    assert_eq!(evaluate(&model, &data.test_clips().unwrap()).unwrap(), run.accuracy);
}

#[test]
fn every_loss_family_trains_on_noisy_labels() {
    let ns = NoiseSpec {
        p_incorrect_iv: 0.3,
        p_incorrect_oov: 0.2,
        ..NoiseSpec::none(1)
    };
    let data = small_data(Some(ns));
    assert!(data.manifest.records.iter().any(|r| r.origin == Origin::Noisy));
    for loss in [
        LossConfig::soft(0.7),
        LossConfig::lq(0.7).with_selective(true),
        LossConfig::mask_max(0.8),
        LossConfig::mask_stat(1.5).with_selective(true),
    ] {
        let mut cfg = small_config(loss);
        cfg.max_epochs = 3;
        let r = run_experiment(&cfg, &data, 2).unwrap();
        assert!(r.mean.is_finite() && r.ci95_halfwidth.is_finite(), "{}", loss.label());
        for run in &r.runs {
            assert!(run.history.epochs.iter().all(|e| e.train_loss.is_finite()), "{}", loss.label());
        }
    }
}
