use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::data::window::{Split, WindowDataset};
use crate::error::{Error, Result};
use crate::memory::PatternMemory;
use crate::model::{HmNet, Mode};
use crate::optim::Adam;

use super::config::TrainConfig;
use super::metrics::validation_mse;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    pub val_mse: Vec<f64>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }

    pub fn best_val_mse(&self) -> f64 {
        self.val_mse[self.best_epoch]
    }
}

/// Tracks the best validation score and how long since it improved.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, bad_epochs: 0 }
    }

    /// Records an epoch; returns whether it is the new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if score < self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad_epochs >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Adam on the MSE of standardized targets, with per-epoch validation,
/// early stopping, and restoration of the best parameters and memories.
pub fn train(model: &mut HmNet, data: &WindowDataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    let c = model.config();
    if c.input_length != data.input_length || c.horizon != data.horizon || c.num_variables != data.num_vars {
        return Err(Error::config(format!(
            "model expects T={}, H={}, N={} but the data has T={}, H={}, N={}",
            c.input_length, c.horizon, c.num_variables, data.input_length, data.horizon, data.num_vars
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params(), cfg.adam());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = TrainHistory::default();
    let mut best: (Vec<Vec<f64>>, Vec<PatternMemory>) =
        (model.params().snapshot(), model.memories().to_vec());
    let mut order: Vec<usize> = (0..data.len(Split::Train)).collect();

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let batches = order.chunks(cfg.batch_size);
        let limit = cfg.max_batches_per_epoch.unwrap_or(usize::MAX);
        let mut total = 0.0;
        let mut seen = 0usize;
        for (bi, idx) in batches.take(limit).enumerate() {
            let batch = data.batch(Split::Train, idx)?;
            let mut g = Graph::new();
            let out = model.forward(&mut g, &batch.x, &batch.time_feats, Mode::Train)?;
            let target = g.input(batch.y);
            let loss = g.mse_loss(out.prediction, target)?;
            let value = g.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, batch: bi, loss: value });
            }
            g.backward(loss)?;
            model.params_mut().zero_grads();
            g.accumulate_param_grads(model.params_mut())?;
            adam.step(model.params_mut())?;
            model.commit(out.pending)?;
            total += value * idx.len() as f64;
            seen += idx.len();
        }
        history.train_loss.push(total / seen.max(1) as f64);
        let val = validation_mse(model, data, cfg.eval_batch_size)?;
        if !val.is_finite() {
            return Err(Error::Diverged { epoch, batch: usize::MAX, loss: val });
        }
        history.val_mse.push(val);
        log::debug!("epoch {epoch}: train {:.6} val {val:.6}", history.train_loss[epoch]);
        if stopper.observe(epoch, val) {
            best = (model.params().snapshot(), model.memories().to_vec());
        }
        if stopper.should_stop() {
            history.stopped_early = epoch + 1 < cfg.max_epochs;
            break;
        }
    }
    model.params_mut().restore(&best.0)?;
    model.memories_mut().clone_from_slice(&best.1);
    history.best_epoch = stopper.best_epoch();
    Ok(history)
}
