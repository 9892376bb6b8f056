//! Chronological splits, standardization and sliding windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::series::TimeSeriesDataset;
use super::timefeat::{time_features, NUM_TIME_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn index(self) -> usize {
        self as usize
    }
}

/// Fractions of the series given to train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const ETT: SplitRatios = SplitRatios { train: 0.6, val: 0.2, test: 0.2 };
    pub const OTHER: SplitRatios = SplitRatios { train: 0.7, val: 0.1, test: 0.2 };

    /// 6:2:2 for the ETT family, 7:1:2 otherwise.
    pub fn for_dataset(name: &str) -> SplitRatios {
        if name.to_ascii_uppercase().starts_with("ETT") {
            Self::ETT
        } else {
            Self::OTHER
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || self.train <= 0.0 {
            return Err(Error::config(format!("bad split ratios {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split ratios sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Row boundaries `[0, train_end, val_end, len]`. Train and test are
    /// floored, validation takes the remainder.
    pub fn borders(&self, len: usize) -> [usize; 4] {
        let train = (len as f64 * self.train + 1e-9).floor() as usize;
        let test = (len as f64 * self.test + 1e-9).floor() as usize;
        [0, train, len - test, len]
    }
}

/// Per-variable affine standardization fitted on the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    /// Population standard deviation; constant columns get 1.
    pub std: Vec<f64>,
}

impl Scaler {
    /// Fits on `values: [rows, n]`.
    pub fn fit(values: &[f64], n: usize) -> Result<Scaler> {
        if n == 0 || values.is_empty() || !values.len().is_multiple_of(n) {
            return Err(Error::shape(format!(
                "cannot fit a scaler on {} values of width {n}",
                values.len()
            )));
        }
        let rows = (values.len() / n) as f64;
        let mut mean = vec![0.0; n];
        for row in values.chunks_exact(n) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows);
        let mut var = vec![0.0; n];
        for row in values.chunks_exact(n) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / rows).sqrt();
                if sd > 0.0 { sd } else { 1.0 }
            })
            .collect();
        Ok(Scaler { mean, std })
    }

    pub fn num_vars(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, values: &mut [f64]) {
        let n = self.num_vars();
        for row in values.chunks_exact_mut(n) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn inverse(&self, values: &mut [f64]) {
        let n = self.num_vars();
        for row in values.chunks_exact_mut(n) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
    }
}

/// One training example, borrowed from the standardized series.
#[derive(Debug, Clone, Copy)]
pub struct WindowView<'a> {
    /// `[T, N]`.
    pub input: &'a [f64],
    /// `[H, N]`.
    pub target: &'a [f64],
    /// `[T, F]`.
    pub time_feats: &'a [f64],
    pub start: usize,
}

/// A batch in model layout.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, T, N]`.
    pub x: Tensor,
    /// `[B, T, F]`.
    pub time_feats: Tensor,
    /// `[B, H, N]`.
    pub y: Tensor,
}

/// Sliding windows over a standardized series.
///
/// Windows are stored as start rows and materialized on demand. A window
/// belongs to a split when its target lies inside that split; its input may
/// reach back into the previous split.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    pub name: String,
    pub input_length: usize,
    pub horizon: usize,
    pub num_vars: usize,
    pub borders: [usize; 4],
    pub scaler: Scaler,
    /// Standardized values, `[len, N]`.
    values: Vec<f64>,
    /// `[len, F]`.
    time_feats: Vec<f64>,
    starts: [Vec<usize>; 3],
}

impl WindowDataset {
    /// Splits chronologically, fits the scaler on the training rows and
    /// enumerates every window with stride 1.
    pub fn build(
        series: &TimeSeriesDataset,
        ratios: SplitRatios,
        input_length: usize,
        horizon: usize,
    ) -> Result<WindowDataset> {
        ratios.validate()?;
        series.validate()?;
        if input_length == 0 || horizon == 0 {
            return Err(Error::config("input length and horizon must be positive"));
        }
        let n = series.num_vars();
        let borders = ratios.borders(series.len());
        let scaler = Scaler::fit(&series.values[..borders[1] * n], n)?;
        let mut values = series.values.clone();
        scaler.transform(&mut values);
        let time_feats = time_features(&series.timestamps);
        Self::from_parts(
            series.name.clone(),
            input_length,
            horizon,
            n,
            borders,
            scaler,
            values,
            time_feats,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        name: String,
        input_length: usize,
        horizon: usize,
        num_vars: usize,
        borders: [usize; 4],
        scaler: Scaler,
        values: Vec<f64>,
        time_feats: Vec<f64>,
    ) -> Result<WindowDataset> {
        let len = borders[3];
        if values.len() != len * num_vars || time_feats.len() != len * NUM_TIME_FEATURES {
            return Err(Error::shape("window dataset arrays disagree with its length"));
        }
        let starts = std::array::from_fn(|s| {
            // Target rows [start + T, start + T + H) must sit inside the split.
            let (lo, hi) = (borders[s], borders[s + 1]);
            let first = lo.saturating_sub(input_length);
            let last = hi.checked_sub(input_length + horizon);
            match last {
                Some(last) if last >= first => (first..=last).collect(),
                _ => Vec::new(),
            }
        });
        let ds = WindowDataset {
            name,
            input_length,
            horizon,
            num_vars,
            borders,
            scaler,
            values,
            time_feats,
            starts,
        };
        if ds.starts[0].is_empty() {
            return Err(Error::config(format!(
                "training split of {} rows is too short for T={input_length}, H={horizon}",
                borders[1]
            )));
        }
        Ok(ds)
    }

    pub fn len(&self, split: Split) -> usize {
        self.starts[split.index()].len()
    }

    pub fn is_empty(&self, split: Split) -> bool {
        self.len(split) == 0
    }

    /// Start rows of the windows in a split.
    pub fn starts(&self, split: Split) -> &[usize] {
        &self.starts[split.index()]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time_feats(&self) -> &[f64] {
        &self.time_feats
    }

    pub fn total_rows(&self) -> usize {
        self.borders[3]
    }

    pub fn window(&self, split: Split, i: usize) -> WindowView<'_> {
        let start = self.starts[split.index()][i];
        let (n, t, h) = (self.num_vars, self.input_length, self.horizon);
        WindowView {
            input: &self.values[start * n..(start + t) * n],
            target: &self.values[(start + t) * n..(start + t + h) * n],
            time_feats: &self.time_feats
                [start * NUM_TIME_FEATURES..(start + t) * NUM_TIME_FEATURES],
            start,
        }
    }

    /// Stacks the windows at `indices` of `split`; `transform` may rewrite
    /// each input (for noise injection) before it is copied.
    pub fn batch_with(
        &self,
        split: Split,
        indices: &[usize],
        mut transform: impl FnMut(&WindowView<'_>, &mut [f64]),
    ) -> Result<Batch> {
        let b = indices.len();
        let (n, t, h) = (self.num_vars, self.input_length, self.horizon);
        let mut x = Vec::with_capacity(b * t * n);
        let mut tf = Vec::with_capacity(b * t * NUM_TIME_FEATURES);
        let mut y = Vec::with_capacity(b * h * n);
        for &i in indices {
            let w = self.window(split, i);
            let at = x.len();
            x.extend_from_slice(w.input);
            transform(&w, &mut x[at..]);
            tf.extend_from_slice(w.time_feats);
            y.extend_from_slice(w.target);
        }
        Ok(Batch {
            x: Tensor::new(vec![b, t, n], x)?,
            time_feats: Tensor::new(vec![b, t, NUM_TIME_FEATURES], tf)?,
            y: Tensor::new(vec![b, h, n], y)?,
        })
    }

    pub fn batch(&self, split: Split, indices: &[usize]) -> Result<Batch> {
        self.batch_with(split, indices, |_, _| {})
    }
}
