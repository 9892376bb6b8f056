use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::noise::{NoiseSetting, NoiseSpec};
use crate::error::Result;
use crate::model::HmNetConfig;

use super::config::Ablation;
use super::experiments::MemorySetting;
use super::metrics::Metrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSwitches {
    pub interact: bool,
    pub denoise: bool,
}

/// One evaluated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub horizon: usize,
    pub variant: String,
    pub ablation: Ablation,
    pub seed: u64,
    pub levels: Vec<LevelSwitches>,
    pub noise: Option<NoiseSpec>,
    pub memory: Option<MemorySetting>,
    pub mse: f64,
    pub mae: f64,
    pub mse_standardized: f64,
    pub mae_standardized: f64,
    pub windows: usize,
    pub epochs_run: usize,
    pub wall_time_secs: f64,
}

impl MetricReport {
    pub fn new(
        dataset: &str,
        config: &HmNetConfig,
        ablation: Ablation,
        variant: String,
        metrics: Metrics,
    ) -> Self {
        Self {
            dataset: dataset.to_string(),
            horizon: config.horizon,
            variant,
            ablation,
            seed: config.seed,
            levels: config
                .levels
                .iter()
                .map(|l| LevelSwitches { interact: l.enable_interact, denoise: l.enable_denoise })
                .collect(),
            noise: None,
            memory: None,
            mse: metrics.mse,
            mae: metrics.mae,
            mse_standardized: metrics.mse_standardized,
            mae_standardized: metrics.mae_standardized,
            windows: metrics.windows,
            epochs_run: 0,
            wall_time_secs: 0.0,
        }
    }

    pub fn file_stem(&self) -> String {
        format!("{}_{}_{}", self.dataset, self.horizon, self.variant)
    }
}

/// Flat row for the CSV summary.
#[derive(Serialize)]
struct CsvRow<'a> {
    dataset: &'a str,
    horizon: usize,
    variant: &'a str,
    ablation: Ablation,
    seed: u64,
    noise_setting: Option<NoiseSetting>,
    noise_probability: Option<f64>,
    memory_capacity: Option<usize>,
    top_k: Option<usize>,
    mse: f64,
    mae: f64,
    mse_standardized: f64,
    mae_standardized: f64,
    windows: usize,
    epochs_run: usize,
    wall_time_secs: f64,
}

/// Writes one `{dataset}_{horizon}_{variant}.json` per report plus a
/// `{summary}.csv` with every row. Returns the written paths.
pub fn write_reports(dir: &Path, summary: &str, reports: &[MetricReport]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(reports.len() + 1);
    for r in reports {
        let path = dir.join(format!("{}.json", r.file_stem()));
        std::fs::write(&path, serde_json::to_string_pretty(r)?)?;
        written.push(path);
    }
    let path = dir.join(format!("{summary}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    for r in reports {
        w.serialize(CsvRow {
            dataset: &r.dataset,
            horizon: r.horizon,
            variant: &r.variant,
            ablation: r.ablation,
            seed: r.seed,
            noise_setting: r.noise.map(|n| n.setting),
            noise_probability: r.noise.map(|n| n.probability),
            memory_capacity: r.memory.map(|m| m.capacity),
            top_k: r.memory.map(|m| m.top_k),
            mse: r.mse,
            mae: r.mae,
            mse_standardized: r.mse_standardized,
            mae_standardized: r.mae_standardized,
            windows: r.windows,
            epochs_run: r.epochs_run,
            wall_time_secs: r.wall_time_secs,
        })?;
    }
    w.flush()?;
    written.push(path);
    Ok(written)
}
