//! CSV ingestion into a validated, uniformly sampled series.

use std::fmt;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling interval of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Frequency {
    pub seconds: i64,
}

impl Frequency {
    pub const MINUTES_15: Frequency = Frequency { seconds: 900 };
    pub const HOURLY: Frequency = Frequency { seconds: 3600 };
    pub const DAILY: Frequency = Frequency { seconds: 86_400 };

    pub fn delta(self) -> TimeDelta {
        TimeDelta::seconds(self.seconds)
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.seconds;
        if s % 86_400 == 0 {
            write!(f, "{}d", s / 86_400)
        } else if s % 3600 == 0 {
            write!(f, "{}h", s / 3600)
        } else if s % 60 == 0 {
            write!(f, "{}min", s / 60)
        } else {
            write!(f, "{s}s")
        }
    }
}

impl std::str::FromStr for Frequency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
        let (num, unit) = s.split_at(split);
        let n: i64 = if num.is_empty() {
            1
        } else {
            num.parse()
                .map_err(|_| Error::config(format!("bad frequency {s:?}")))?
        };
        let unit_seconds = match unit {
            "s" | "sec" => 1,
            "t" | "min" | "m" => 60,
            "h" | "hour" => 3600,
            "d" | "day" => 86_400,
            "w" | "week" => 7 * 86_400,
            _ => return Err(Error::config(format!("bad frequency {s:?}"))),
        };
        if n <= 0 {
            return Err(Error::config(format!("frequency must be positive, got {s:?}")));
        }
        Ok(Frequency {
            seconds: n * unit_seconds,
        })
    }
}

impl TryFrom<String> for Frequency {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Frequency> for String {
    fn from(f: Frequency) -> String {
        f.to_string()
    }
}

/// A multivariate series with one row per timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub name: String,
    /// `len x vars`, row-major.
    pub values: Vec<f64>,
    pub timestamps: Vec<NaiveDateTime>,
    pub variable_names: Vec<String>,
    pub frequency: Frequency,
}

impl TimeSeriesDataset {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn num_vars(&self) -> usize {
        self.variable_names.len()
    }

    /// Keeps only the first `rows` rows.
    pub fn truncate(&mut self, rows: usize) {
        let n = self.num_vars();
        self.timestamps.truncate(rows);
        self.values.truncate(rows * n);
    }

    /// Checks uniform spacing and finiteness.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.values.len() != self.len() * n {
            return Err(Error::shape(format!(
                "{} values for {} rows of {n} variables",
                self.values.len(),
                self.len()
            )));
        }
        let step = self.frequency.delta();
        let bad: Vec<usize> = self
            .timestamps
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] - w[0] != step)
            .map(|(i, _)| i + 1)
            .collect();
        if !bad.is_empty() {
            return Err(Error::Data {
                path: self.name.clone().into(),
                message: format!(
                    "{} rows break the {} spacing, first at row {}",
                    bad.len(),
                    self.frequency,
                    bad[0]
                ),
            });
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data {
                path: self.name.clone().into(),
                message: format!("non-finite value at row {}", i / n),
            });
        }
        Ok(())
    }
}

/// Ingestion options.
#[derive(Debug, Clone, Default)]
pub struct CsvSchema {
    /// Expected spacing; inferred from the first two rows when `None`.
    pub frequency: Option<Frequency>,
}

const DATE_FORMATS: [&str; 4] = [
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y/%m/%d %H:%M:%S",
    "%Y/%m/%d %H:%M",
];

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    DATE_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| {
            ["%Y-%m-%d", "%Y/%m/%d"]
                .iter()
                .find_map(|f| NaiveDate::parse_from_str(s, f).ok())
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

/// Most line numbers listed in one error message.
const MAX_REPORTED: usize = 10;

fn line_list(lines: &[u64]) -> String {
    let shown: Vec<String> = lines.iter().take(MAX_REPORTED).map(u64::to_string).collect();
    let more = lines.len().saturating_sub(MAX_REPORTED);
    if more > 0 {
        format!("{} (+{more} more)", shown.join(", "))
    } else {
        shown.join(", ")
    }
}

/// Reads a CSV whose first column is a timestamp and whose remaining columns
/// are numeric variables, in file order.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<TimeSeriesDataset> {
    let data_err = |message: String| Error::Data {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| data_err(e.to_string()))?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 {
        return Err(data_err("need a date column and at least one variable".into()));
    }
    let variable_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let n = variable_names.len();

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut bad_lines = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let ts = record.get(0).and_then(parse_timestamp);
        let row: Option<Vec<f64>> = (record.len() == n + 1)
            .then(|| {
                record
                    .iter()
                    .skip(1)
                    .map(|f| f.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                    .collect()
            })
            .flatten();
        match (ts, row) {
            (Some(ts), Some(row)) => {
                timestamps.push(ts);
                values.extend(row);
            }
            _ => bad_lines.push(line),
        }
    }
    if !bad_lines.is_empty() {
        return Err(data_err(format!(
            "{} unparseable rows at lines {}",
            bad_lines.len(),
            line_list(&bad_lines)
        )));
    }
    if timestamps.len() < 2 {
        return Err(data_err(format!("only {} data rows", timestamps.len())));
    }
    let backwards: Vec<u64> = timestamps
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] <= w[0])
        .map(|(i, _)| i as u64 + 3) // header is line 1, first data row line 2
        .collect();
    if !backwards.is_empty() {
        return Err(data_err(format!(
            "timestamps not strictly increasing at lines {}",
            line_list(&backwards)
        )));
    }
    let frequency = match schema.frequency {
        Some(f) => f,
        None => Frequency {
            seconds: (timestamps[1] - timestamps[0]).num_seconds(),
        },
    };
    let step = frequency.delta();
    let gaps: Vec<u64> = timestamps
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] - w[0] != step)
        .map(|(i, _)| i as u64 + 3)
        .collect();
    if !gaps.is_empty() {
        return Err(data_err(format!(
            "{} rows break the {frequency} spacing (missing or irregular timestamps) at lines {}",
            gaps.len(),
            line_list(&gaps)
        )));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(TimeSeriesDataset {
        name,
        values,
        timestamps,
        variable_names,
        frequency,
    })
}
