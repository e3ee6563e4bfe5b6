use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::evaluate::{evaluate, MetricReport};
use super::pipeline::{moving_average, train_diffusion};
use super::probe::GelProbe;
use crate::cttp::CttpModel;
use crate::data::Dataset;
use crate::dit::format_layers;
use crate::error::{Error, Result};
use crate::image::Image;

/// The published ablation axes and their default grids.
pub fn default_grid(axis: &str, depth: usize) -> Result<Vec<String>> {
    let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
    Ok(match axis {
        "conditions" => v(&["t", "ts", "tsg"]),
        "mechanism" => v(&["modulation", "joint", "cross"]),
        "layers" => {
            let half = (depth / 2).max(1);
            let mut g = vec![format_layers(&(1..=half).collect())];
            if half < depth {
                g.push(format_layers(&(half + 1..=depth).collect()));
            }
            g.push(format_layers(&(1..=depth).collect()));
            g
        }
        "n_gs" => v(&["1", "2", "4", "6", "8"]),
        "theta_t" => v(&["0", "200", "400", "600", "800"]),
        other => {
            return Err(Error::Config(format!(
                "unknown ablation axis {other:?} (conditions|mechanism|layers|n_gs|theta_t)"
            )))
        }
    })
}

/// Outcome of training and evaluating one configuration.
pub struct CellResult {
    pub report: MetricReport,
    pub generated: Vec<Image>,
    pub requested_gels: Vec<usize>,
    pub gel_accuracy: Option<f64>,
    pub final_loss: f64,
    /// Mean of the first and last 10-step loss windows.
    pub loss_start_end: (f64, f64),
}

pub fn run_cell(cfg: &ExperimentConfig, dataset: &Dataset, cttp: Option<&CttpModel>, probe: Option<&GelProbe>) -> Result<CellResult> {
    let outcome = train_diffusion(cfg, dataset)?;
    let (report, generated, requested_gels) = evaluate(&outcome.model, dataset, cfg, cttp)?;
    let gel_accuracy = probe.map(|p| {
        let imgs: Vec<&Image> = generated.iter().collect();
        p.accuracy(&imgs, &requested_gels)
    });
    let losses: Vec<f64> = outcome.losses.iter().map(|l| l.loss).collect();
    let ma = moving_average(&losses, 10.min(losses.len().max(1)));
    Ok(CellResult {
        report,
        generated,
        requested_gels,
        gel_accuracy,
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
        loss_start_end: (ma.first().copied().unwrap_or(f64::NAN), ma.last().copied().unwrap_or(f64::NAN)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: String,
    pub value: String,
    pub status: String,
    pub label: String,
    pub mean_ssim: Option<f64>,
    pub mean_psnr: Option<f64>,
    pub lpips: String,
    pub mean_cttp: Option<f64>,
    pub mean_cttp_shuffled: Option<f64>,
    pub gel_accuracy: Option<f64>,
    pub final_loss: Option<f64>,
    pub config_hash: String,
    pub error: String,
}

/// Vary one axis at a time around `base`. Every cell yields a row; failures
/// are rows with status `error`.
pub fn run_ablation(
    base: &ExperimentConfig,
    grid: &[(String, Vec<String>)],
    dataset: &Dataset,
    cttp: Option<&CttpModel>,
    probe: Option<&GelProbe>,
) -> Result<Vec<AblationRow>> {
    for (axis, _) in grid {
        default_grid(axis, base.model.dit.depth)?;
    }
    let mut rows = Vec::new();
    for (axis, values) in grid {
        for value in values {
            let mut cfg = base.clone();
            let applied = cfg.apply_override(axis, value).and_then(|_| cfg.validate());
            let label = cfg.label();
            let hash = cfg.hash().unwrap_or_default();
            let result = applied.and_then(|_| run_cell(&cfg, dataset, cttp, probe));
            let row = match result {
                Ok(cell) => AblationRow {
                    axis: axis.clone(),
                    value: value.clone(),
                    status: "ok".into(),
                    label,
                    mean_ssim: Some(cell.report.mean_ssim),
                    mean_psnr: Some(cell.report.mean_psnr),
                    lpips: "n/a".into(),
                    mean_cttp: cell.report.mean_cttp,
                    mean_cttp_shuffled: cell.report.mean_cttp_shuffled,
                    gel_accuracy: cell.gel_accuracy,
                    final_loss: Some(cell.final_loss),
                    config_hash: hash,
                    error: String::new(),
                },
                Err(e) => {
                    log::warn!("ablation cell {axis}={value} failed: {e}");
                    AblationRow {
                        axis: axis.clone(),
                        value: value.clone(),
                        status: "error".into(),
                        label,
                        mean_ssim: None,
                        mean_psnr: None,
                        lpips: "n/a".into(),
                        mean_cttp: None,
                        mean_cttp_shuffled: None,
                        gel_accuracy: None,
                        final_loss: None,
                        config_hash: hash,
                        error: e.to_string(),
                    }
                }
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
