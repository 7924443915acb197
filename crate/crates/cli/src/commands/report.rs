use std::fmt::Write;
use std::fs;
use std::path::Path;

use sednoise_core::train::{EpochRecord, RunReport};
use sednoise_core::{LossConfig, Subset};
use serde::{Deserialize, Serialize};

use super::write_file;
use crate::svg::{self, Plot, Series};
use crate::CliError;

/// Results of one (subset, loss) cell, as stored in `runs/<key>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub subset: Subset,
    pub loss: LossConfig,
    pub label: String,
    pub n_runs: usize,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub best_epochs: Vec<usize>,
    pub epochs_trained: Vec<usize>,
    pub mean: f64,
    pub ci95_halfwidth: f64,
    pub median: f64,
}

pub(crate) fn cell_key(subset: Subset, loss: &LossConfig) -> String {
    format!("{}__{}", subset.as_str(), loss.tag())
}

impl CellSummary {
    pub fn from_report(r: &RunReport) -> Self {
        CellSummary {
            subset: r.config.subset,
            loss: r.config.loss,
            label: r.config.loss.label(),
            n_runs: r.n_runs,
            seeds: r.runs.iter().map(|o| o.seed).collect(),
            accuracies: r.accuracies.clone(),
            best_epochs: r.runs.iter().map(|o| o.best_epoch).collect(),
            epochs_trained: r.runs.iter().map(|o| o.history.len()).collect(),
            mean: r.mean,
            ci95_halfwidth: r.ci95_halfwidth,
            median: r.median(),
        }
    }

    pub fn key(&self) -> String {
        cell_key(self.subset, &self.loss)
    }

    /// `mean±ci` in percent.
    pub fn cell(&self) -> String {
        format!("{:.1}±{:.1}", 100.0 * self.mean, 100.0 * self.ci95_halfwidth)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub cells: Vec<CellSummary>,
    /// Contents of `report.txt`.
    pub table: String,
    pub plots: usize,
}

fn read_json(path: &Path) -> Result<CellSummary, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

/// Loss rows by subset columns; cells that were not run read `--`.
pub fn render_table(cells: &[CellSummary]) -> String {
    let mut subsets: Vec<Subset> = Vec::new();
    let mut losses: Vec<(String, LossConfig)> = Vec::new();
    for c in cells {
        if !subsets.contains(&c.subset) {
            subsets.push(c.subset);
        }
        if !losses.iter().any(|(_, l)| *l == c.loss) {
            losses.push((c.label.clone(), c.loss));
        }
    }
    let mut rows: Vec<Vec<String>> = vec![std::iter::once("loss".to_string())
        .chain(subsets.iter().map(|s| s.as_str().to_string()))
        .collect()];
    for (label, loss) in &losses {
        let mut row = vec![label.clone()];
        for s in &subsets {
            let cell = cells.iter().find(|c| c.subset == *s && c.loss == *loss);
            row.push(cell.map_or_else(|| "--".to_string(), CellSummary::cell));
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut runs: Vec<usize> = cells.iter().map(|c| c.n_runs).collect();
    runs.sort_unstable();
    runs.dedup();
    let runs = runs.iter().map(ToString::to_string).collect::<Vec<_>>().join("/");
    let _ = writeln!(out, "Clip-level test accuracy (%), mean±95% CI over {runs} runs");
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(j, (v, &w))| {
                let pad = w - v.chars().count();
                if j == 0 {
                    format!("{v}{}", " ".repeat(pad))
                } else {
                    format!("{}{v}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    out
}

fn read_history(path: &Path) -> Result<Vec<EpochRecord>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| CliError::io(path, e))
}

pub(crate) fn history_path(output_dir: &Path, key: &str, seed: u64) -> std::path::PathBuf {
    output_dir.join("histories").join(format!("{key}_seed{seed}.csv"))
}

/// Rebuilds `report.txt` and `plots/*.svg` from `report.csv`, `runs/` and
/// `histories/` under `output_dir`.
pub fn cmd_report(output_dir: &Path) -> Result<ReportSummary, CliError> {
    let csv_path = output_dir.join("report.csv");
    let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    let mut cells = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| CliError::io(&csv_path, e))?;
        let key = format!("{}__{}", row.get(0).unwrap_or(""), row.get(1).unwrap_or(""));
        let cell = read_json(&output_dir.join("runs").join(format!("{key}.json")))?;
        if cell.key() != key {
            return Err(CliError::Data(format!("runs/{key}.json describes cell `{}`", cell.key())));
        }
        cells.push(cell);
    }
    if cells.is_empty() {
        return Err(CliError::Data(format!("{} lists no results", csv_path.display())));
    }
    let table = render_table(&cells);
    write_file(&output_dir.join("report.txt"), &table)?;

    for c in &cells {
        let mut series = Vec::with_capacity(c.seeds.len());
        for &seed in &c.seeds {
            let h = read_history(&history_path(output_dir, &c.key(), seed))?;
            series.push(Series {
                label: format!("seed {seed}"),
                points: h.iter().map(|e| (e.epoch as f64, e.val_accuracy)).collect(),
            });
        }
        let plot = Plot {
            title: format!("{} on {}", c.label, c.subset),
            x_label: "epoch".into(),
            y_label: "validation accuracy".into(),
            y_range: Some((0.0, 1.0)),
        };
        write_file(&output_dir.join("plots").join(format!("{}.svg", c.key())), svg::render(&plot, &series))?;
    }
    Ok(ReportSummary {
        plots: cells.len(),
        cells,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(subset: Subset, loss: LossConfig, mean: f64) -> CellSummary {
        CellSummary {
            subset,
            loss,
            label: loss.label(),
            n_runs: 7,
            seeds: vec![],
            accuracies: vec![],
            best_epochs: vec![],
            epochs_trained: vec![],
            mean,
            ci95_halfwidth: 0.004,
            median: mean,
        }
    }

    #[test]
    fn table_marks_skipped_cells() {
        let cells = vec![
            cell(Subset::All, LossConfig::cce(), 0.716),
            cell(Subset::All, LossConfig::lq(0.7), 0.735),
            cell(Subset::Clean, LossConfig::cce(), 0.602),
        ];
        let t = render_table(&cells);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "Clip-level test accuracy (%), mean±95% CI over 7 runs");
        assert_eq!(lines[1], "loss            all     clean");
        assert_eq!(lines[2], "-".repeat(29));
        assert_eq!(lines[3], "baseline   71.6±0.4  60.2±0.4");
        assert_eq!(lines[4], "L_q q=0.7  73.5±0.4        --");
    }
}
