use serde::{Deserialize, Serialize};

use crate::data::noise::{inject_noise, NoiseSpec};
use crate::data::window::{Split, WindowDataset};
use crate::error::{Error, Result};
use crate::model::HmNet;

/// Error statistics over every forecast value of a split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// On the original data scale.
    pub mse: f64,
    pub mae: f64,
    /// On the z-scored scale the model is trained on.
    pub mse_standardized: f64,
    pub mae_standardized: f64,
    pub windows: usize,
}

/// Running sums, filled in window order so results do not depend on batching.
#[derive(Debug, Default, Clone)]
pub struct MetricAccumulator {
    sq: f64,
    abs: f64,
    sq_std: f64,
    abs_std: f64,
    count: usize,
    windows: usize,
}

impl MetricAccumulator {
    /// `pred` and `target` are `[H, N]` standardized windows; `std` rescales
    /// each variable back to original units (the mean cancels).
    pub fn add_window(&mut self, pred: &[f64], target: &[f64], std: &[f64]) {
        let n = std.len();
        for (i, (p, t)) in pred.iter().zip(target).enumerate() {
            let e = p - t;
            let e_raw = e * std[i % n];
            self.sq += e_raw * e_raw;
            self.abs += e_raw.abs();
            self.sq_std += e * e;
            self.abs_std += e.abs();
        }
        self.count += pred.len();
        self.windows += 1;
    }

    pub fn finish(&self) -> Result<Metrics> {
        if self.count == 0 {
            return Err(Error::config("no windows to evaluate"));
        }
        let c = self.count as f64;
        Ok(Metrics {
            mse: self.sq / c,
            mae: self.abs / c,
            mse_standardized: self.sq_std / c,
            mae_standardized: self.abs_std / c,
            windows: self.windows,
        })
    }
}

/// Evaluates on every window of `split`, optionally perturbing each input
/// with noise seeded by the window's start row. Model and memory are left
/// untouched.
pub fn evaluate(
    model: &HmNet,
    data: &WindowDataset,
    split: Split,
    noise: Option<&NoiseSpec>,
    batch_size: usize,
) -> Result<Metrics> {
    let n = data.num_vars;
    let mut acc = MetricAccumulator::default();
    let indices: Vec<usize> = (0..data.len(split)).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let mut failure = None;
        let batch = data.batch_with(split, chunk, |w, input| {
            if let Some(spec) = noise {
                if let Err(e) = inject_noise(input, n, spec, &mut spec.rng_for(w.start)) {
                    failure.get_or_insert(e);
                }
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        let pred = model.predict(&batch.x, &batch.time_feats)?;
        let per = data.horizon * n;
        for (p, t) in pred.data().chunks_exact(per).zip(batch.y.data().chunks_exact(per)) {
            acc.add_window(p, t, &data.scaler.std);
        }
    }
    acc.finish()
}

/// Validation loss used for early stopping: standardized MSE.
pub fn validation_mse(model: &HmNet, data: &WindowDataset, batch_size: usize) -> Result<f64> {
    let split = if data.is_empty(Split::Val) { Split::Train } else { Split::Val };
    Ok(evaluate(model, data, split, None, batch_size)?.mse_standardized)
}
