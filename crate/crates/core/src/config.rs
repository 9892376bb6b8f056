//! Run configuration: a TOML file with one section per module.
//!
//! ```toml
//! [run]
//! out = "runs/toy"
//! seeds = [0]
//! jobs = 1
//!
//! [data]
//! dataset = "sinusoid"
//!
//! [model]
//! horizon = 96
//! block_sizes = [6, 4, 4]
//!
//! [train]
//! max_epochs = 30
//! ```
//!
//! Every key has a default, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::noise::NoiseSetting;
use crate::data::registry::Registry;
use crate::data::series::{load_csv, CsvSchema, TimeSeriesDataset};
use crate::data::synthetic::sinusoids;
use crate::data::window::{SplitRatios, WindowDataset};
use crate::data::{cache, NUM_TIME_FEATURES};
use crate::error::{Error, Result};
use crate::model::config::{
    Activation, DEFAULT_BLOCK_SIZES, DEFAULT_HIDDEN, DEFAULT_INPUT_LENGTH, DEFAULT_MEMORY,
    DEFAULT_TOP_K,
};
use crate::model::{HmNetConfig, LevelConfig};
use crate::train::experiments::{MemorySetting, NOISE_PROBABILITIES};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub out: PathBuf,
    /// One run per seed; the first seeds single-run commands.
    pub seeds: Vec<u64>,
    pub jobs: usize,
    /// Horizons looped over by the experiment commands; defaults to
    /// `model.horizon`.
    pub horizons: Option<Vec<usize>>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { out: PathBuf::from("runs"), seeds: vec![0], jobs: 1, horizons: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Registry name, or `sinusoid` for the built-in toy series.
    pub dataset: String,
    pub registry: Option<PathBuf>,
    /// Read this CSV directly instead of going through a registry.
    pub csv: Option<PathBuf>,
    /// Overrides the ratios implied by the dataset name.
    pub split: Option<SplitRatios>,
    /// Binary window cache written by `ingest` and preferred when present.
    pub cache: Option<PathBuf>,
    pub synthetic_steps: usize,
    pub synthetic_vars: usize,
    pub synthetic_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dataset: "sinusoid".into(),
            registry: None,
            csv: None,
            split: None,
            cache: None,
            synthetic_steps: 2000,
            synthetic_vars: 4,
            synthetic_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub input_length: usize,
    pub horizon: usize,
    pub hidden_dim: usize,
    pub block_sizes: Vec<usize>,
    pub memory_capacity: usize,
    pub top_k: usize,
    pub enable_interact: bool,
    pub enable_denoise: bool,
    pub time_features: bool,
    pub activation: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            input_length: DEFAULT_INPUT_LENGTH,
            horizon: 96,
            hidden_dim: DEFAULT_HIDDEN,
            block_sizes: DEFAULT_BLOCK_SIZES.to_vec(),
            memory_capacity: DEFAULT_MEMORY,
            top_k: DEFAULT_TOP_K,
            enable_interact: true,
            enable_denoise: true,
            time_features: true,
            activation: Activation::Gelu,
        }
    }
}

impl ModelSection {
    /// Model config for `num_variables` at `horizon`.
    pub fn build(&self, num_variables: usize, horizon: usize, seed: u64) -> Result<HmNetConfig> {
        let c = HmNetConfig {
            input_length: self.input_length,
            horizon,
            num_variables,
            hidden_dim: self.hidden_dim,
            levels: self
                .block_sizes
                .iter()
                .map(|&s| LevelConfig {
                    block_size: s,
                    enable_interact: self.enable_interact,
                    enable_denoise: self.enable_denoise,
                    memory_capacity: self.memory_capacity,
                    top_k: self.top_k,
                })
                .collect(),
            time_feature_dim: if self.time_features { NUM_TIME_FEATURES } else { 0 },
            activation: self.activation,
            seed,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub settings: Vec<NoiseSetting>,
    pub probabilities: Vec<f64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            settings: vec![NoiseSetting::ResidualOnly, NoiseSetting::TrendAndResidual],
            probabilities: NOISE_PROBABILITIES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySweepSection {
    pub settings: Vec<MemorySetting>,
}

impl Default for MemorySweepSection {
    fn default() -> Self {
        Self { settings: MemorySetting::SWEEP.to_vec() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub noise: NoiseSection,
    pub memsweep: MemorySweepSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    /// Reads a config; relative data paths resolve against its directory.
    pub fn read(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.registry, &mut cfg.data.csv, &mut cfg.data.cache].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// The configuration with every default written out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn horizons(&self) -> Vec<usize> {
        self.run.horizons.clone().unwrap_or_else(|| vec![self.model.horizon])
    }

    pub fn first_seed(&self) -> u64 {
        self.run.seeds.first().copied().unwrap_or(0)
    }

    /// Checks everything that can be checked without reading data.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.run.seeds.is_empty() {
            return Err(Error::config("run.seeds must not be empty"));
        }
        if self.run.jobs == 0 {
            return Err(Error::config("run.jobs must be at least 1"));
        }
        let horizons = self.horizons();
        if horizons.is_empty() {
            return Err(Error::config("run.horizons must not be empty"));
        }
        for h in horizons {
            self.model.build(1, h, 0)?;
        }
        if let Some(r) = &self.data.split {
            r.validate()?;
        }
        if self.noise.probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("noise probabilities must lie in [0, 1]"));
        }
        if self.memsweep.settings.iter().any(|m| m.capacity == 0 || m.top_k == 0) {
            return Err(Error::config("memory sweep entries need capacity and top_k of at least 1"));
        }
        let synthetic = self.data.csv.is_none() && self.data.registry.is_none();
        if synthetic && self.data.dataset != "sinusoid" {
            return Err(Error::config(format!(
                "dataset {:?} needs data.registry or data.csv",
                self.data.dataset
            )));
        }
        if synthetic && (self.data.synthetic_steps == 0 || self.data.synthetic_vars == 0) {
            return Err(Error::config("synthetic_steps and synthetic_vars must be at least 1"));
        }
        Ok(())
    }

    /// Loads the raw series and its split ratios.
    pub fn load_series(&self) -> Result<(TimeSeriesDataset, SplitRatios)> {
        let d = &self.data;
        let (series, ratios) = if let Some(csv) = &d.csv {
            let mut s = load_csv(csv, &CsvSchema::default())?;
            s.name = d.dataset.clone();
            (s, SplitRatios::for_dataset(&d.dataset))
        } else if let Some(reg) = &d.registry {
            let reg = Registry::read(reg)?;
            let entry = reg.get(&d.dataset)?;
            (entry.load(&d.dataset)?, entry.split)
        } else {
            let s = sinusoids(d.synthetic_steps, d.synthetic_vars, d.synthetic_seed);
            (s, SplitRatios::OTHER)
        };
        Ok((series, d.split.unwrap_or(ratios)))
    }

    /// Where `ingest` writes the window cache for `horizon`.
    pub fn cache_path(&self, horizon: usize) -> PathBuf {
        self.data.cache.clone().unwrap_or_else(|| {
            self.run
                .out
                .join(format!("{}_{}_{}.windows", self.data.dataset, self.model.input_length, horizon))
        })
    }

    /// Windows for `horizon`, from the cache when it matches.
    pub fn load_windows(&self, horizon: usize) -> Result<WindowDataset> {
        let path = self.cache_path(horizon);
        {
            if path.exists() {
                let ds = cache::read_windows(&path)?;
                if ds.input_length == self.model.input_length && ds.horizon == horizon {
                    return Ok(ds);
                }
                log::info!("cache {} is for other window sizes; rebuilding", path.display());
            }
        }
        let (series, ratios) = self.load_series()?;
        WindowDataset::build(&series, ratios, self.model.input_length, horizon)
    }
}
