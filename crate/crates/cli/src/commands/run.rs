use std::path::PathBuf;

use sednoise_core::nn::{save_checkpoint, Checkpoint};
use sednoise_core::train::{write_reports_csv, ExperimentData, RunReport};
use sednoise_core::run_experiment;

use super::features::load_cached;
use super::inject::{corrupt, write_noise_logs};
use super::report::{cell_key, history_path, CellSummary};
use super::{cmd_features, cmd_report, create_dir, load_dataset, write_file, Options};
use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub cells: Vec<CellSummary>,
    pub report_csv: PathBuf,
    /// Contents of `report.txt`.
    pub table: String,
}

/// Features for every clip of the (possibly corrupted) dataset.
///
/// A manifest without a noise section goes through the on-disk feature
/// cache; synthetic or corrupted audio only exists in memory and is
/// extracted directly.
fn prepare(cfg: &ExperimentConfig, opts: &Options) -> Result<ExperimentData, CliError> {
    let fc = cfg.features();
    if cfg.dataset.manifest.is_some() && cfg.noise.is_none() {
        let summary = cmd_features(cfg, opts)?;
        if !summary.failed.is_empty() {
            let list: Vec<String> = summary.failed.iter().map(|(p, e)| format!("{}: {e}", p.display())).collect();
            return Err(CliError::Data(format!("feature extraction failed:\n  {}", list.join("\n  "))));
        }
        let manifest = super::load_manifest_of(cfg)?;
        let matrices = opts.install(|| load_cached(cfg, &manifest))??;
        return Ok(ExperimentData::from_matrices(manifest, matrices, fc.patch_frames())?);
    }
    let data = opts.install(|| load_dataset(cfg))??;
    let (manifest, clips) = match cfg.noise {
        Some(_) => {
            let (manifest, injected) = corrupt(cfg, &data)?;
            write_noise_logs(&cfg.output_dir.join("noise"), &injected)?;
            (manifest, injected.clips)
        }
        None => (data.manifest, data.clips),
    };
    Ok(opts.install(|| ExperimentData::from_clips(manifest, &clips, &fc))??)
}

fn write_cell(cfg: &ExperimentConfig, report: &RunReport) -> Result<CellSummary, CliError> {
    let out = &cfg.output_dir;
    let key = cell_key(report.config.subset, &report.config.loss);
    let cell = CellSummary::from_report(report);
    let json = serde_json::to_string_pretty(&cell).expect("cell summary serializes");
    write_file(&out.join("runs").join(format!("{key}.json")), json + "\n")?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(["seed", "accuracy", "best_epoch", "epochs_trained"]).map_err(csv_err)?;
    for r in &report.runs {
        w.write_record([r.seed.to_string(), format!("{:.6}", r.accuracy), r.best_epoch.to_string(), r.history.len().to_string()])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    write_file(&out.join("runs").join(format!("{key}.csv")), bytes)?;

    create_dir(&out.join("checkpoints"))?;
    for r in &report.runs {
        let mut buf = Vec::new();
        r.history.write_csv(&mut buf)?;
        write_file(&history_path(out, &key, r.seed), buf)?;
        let ckpt = Checkpoint {
            network: r.model.network.clone(),
            epoch: r.best_epoch as u32,
            band_mean: r.model.standardizer.mean.clone(),
            band_std: r.model.standardizer.std.clone(),
        };
        let path = out.join("checkpoints").join(format!("{key}_seed{}.ckpt", r.seed));
        save_checkpoint(&path, &ckpt).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(cell)
}

/// Runs every (subset, loss) cell of the grid with `n_runs` seeds each and
/// writes reports, histories, checkpoints and plots under `output_dir`.
pub fn cmd_run(cfg: &ExperimentConfig, opts: &Options) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let resolved = serde_json::to_string_pretty(cfg).expect("config serializes");
    write_file(&cfg.output_dir.join("config.resolved.json"), resolved + "\n")?;
    let data = prepare(cfg, opts)?;

    let grid = cfg.train.grid();
    let mut reports = Vec::with_capacity(grid.len());
    for (i, (subset, loss)) in grid.iter().enumerate() {
        let tc = cfg.train.train_config(*subset, *loss);
        let mut report = opts.install(|| run_experiment(&tc, &data, cfg.train.n_runs))??;
        write_cell(cfg, &report)?;
        if opts.verbose {
            eprintln!("[{}/{}] {report}", i + 1, grid.len());
        }
        // Models are on disk now; keep only the numbers.
        report.runs.clear();
        reports.push(report);
    }

    let mut buf = Vec::new();
    write_reports_csv(&mut buf, &reports)?;
    let report_csv = cfg.output_dir.join("report.csv");
    write_file(&report_csv, buf)?;
    let rendered = cmd_report(&cfg.output_dir)?;
    Ok(RunSummary {
        cells: rendered.cells,
        report_csv,
        table: rendered.table,
    })
}
