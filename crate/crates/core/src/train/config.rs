use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HmNetConfig;
use crate::optim::AdamConfig;

/// Which of the two per-level modules are switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    NoInteract,
    NoDenoise,
    NoBoth,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoInteract,
        Ablation::NoDenoise,
        Ablation::NoBoth,
    ];

    pub fn interact(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoDenoise)
    }

    pub fn denoise(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoInteract)
    }

    /// Sets the switches of every level.
    pub fn apply(self, config: &mut HmNetConfig) {
        config.set_switches(self.interact(), self.denoise());
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoInteract => "no_interact",
            Ablation::NoDenoise => "no_denoise",
            Ablation::NoBoth => "no_both",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown ablation {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Drives batch shuffling.
    pub seed: u64,
    pub ablation: Ablation,
    /// Caps the batches per epoch; `None` uses every training window.
    pub max_batches_per_epoch: Option<usize>,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 30,
            patience: 3,
            seed: 0,
            ablation: Ablation::Full,
            max_batches_per_epoch: None,
            eval_batch_size: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(Error::config("patience must be at least 1"));
        }
        if self.batch_size < 1 || self.eval_batch_size < 1 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.max_epochs < 1 {
            return Err(Error::config("max_epochs must be at least 1"));
        }
        if self.max_batches_per_epoch == Some(0) {
            return Err(Error::config("max_batches_per_epoch must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("bad learning rate {}", self.learning_rate)));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, ..AdamConfig::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_switches() {
        let mut c = HmNetConfig::standard(3, 96);
        Ablation::NoBoth.apply(&mut c);
        assert!(c.levels.iter().all(|l| !l.enable_interact && !l.enable_denoise));
        Ablation::NoDenoise.apply(&mut c);
        assert!(c.levels.iter().all(|l| l.enable_interact && !l.enable_denoise));
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { learning_rate: f64::NAN, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
        TrainConfig::default().validate().unwrap();
    }
}
