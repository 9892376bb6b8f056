//! Dataset registry: a TOML file mapping dataset names to CSV paths,
//! sampling frequency and split ratios.
//!
//! ```toml
//! [ETTm2]
//! path = "ETTm2.csv"
//! frequency = "15min"
//! split = { train = 0.6, val = 0.2, test = 0.2 }
//! rows = 57600
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::series::{load_csv, CsvSchema, Frequency, TimeSeriesDataset};
use super::window::SplitRatios;

/// 20 months of 15-minute data, the ETTm evaluation window.
pub const ETTM_ROWS: usize = 20 * 30 * 24 * 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryEntry {
    pub path: PathBuf,
    pub frequency: Frequency,
    pub split: SplitRatios,
    /// Keep only the leading rows of the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
}

impl RegistryEntry {
    pub fn load(&self, name: &str) -> Result<TimeSeriesDataset> {
        let schema = CsvSchema { frequency: Some(self.frequency) };
        let mut ds = load_csv(&self.path, &schema)?;
        ds.name = name.to_string();
        if let Some(rows) = self.rows {
            if ds.len() < rows {
                return Err(Error::Data {
                    path: self.path.clone(),
                    message: format!("{} rows, registry expects at least {rows}", ds.len()),
                });
            }
            ds.truncate(rows);
        }
        Ok(ds)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Registry {
    pub entries: BTreeMap<String, RegistryEntry>,
}

impl Registry {
    /// Reads a registry; relative paths resolve against its directory.
    pub fn read(path: &Path) -> Result<Registry> {
        let text = std::fs::read_to_string(path)?;
        let mut reg: Registry = toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for (name, entry) in &mut reg.entries {
            entry.split.validate().map_err(|e| Error::config(format!("{name}: {e}")))?;
            if entry.path.is_relative() {
                entry.path = base.join(&entry.path);
            }
        }
        Ok(reg)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&RegistryEntry> {
        self.entries.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.entries.keys().map(String::as_str).collect();
            Error::config(format!("dataset {name:?} not in registry (known: {})", known.join(", ")))
        })
    }

    /// ETTm2 and Exchange under `dir`, with the standard protocol.
    pub fn benchmarks(dir: &Path) -> Registry {
        let mut entries = BTreeMap::new();
        entries.insert(
            "ETTm2".to_string(),
            RegistryEntry {
                path: dir.join("ETTm2.csv"),
                frequency: Frequency::MINUTES_15,
                split: SplitRatios::ETT,
                rows: Some(ETTM_ROWS),
            },
        );
        entries.insert(
            "exchange_rate".to_string(),
            RegistryEntry {
                path: dir.join("exchange_rate.csv"),
                frequency: Frequency::DAILY,
                split: SplitRatios::OTHER,
                rows: None,
            },
        );
        Registry { entries }
    }
}
