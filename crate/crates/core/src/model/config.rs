use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nonlinearity applied after the convolution unit and inside the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Identity,
}

/// One level of the hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub block_size: usize,
    pub enable_interact: bool,
    pub enable_denoise: bool,
    pub memory_capacity: usize,
    pub top_k: usize,
}

impl LevelConfig {
    pub fn new(block_size: usize) -> Self {
        Self {
            block_size,
            enable_interact: true,
            enable_denoise: true,
            memory_capacity: 4096,
            top_k: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmNetConfig {
    pub input_length: usize,
    pub horizon: usize,
    pub num_variables: usize,
    pub hidden_dim: usize,
    pub levels: Vec<LevelConfig>,
    pub time_feature_dim: usize,
    #[serde(default)]
    pub activation: Activation,
    pub seed: u64,
}

pub const DEFAULT_INPUT_LENGTH: usize = 96;
pub const DEFAULT_BLOCK_SIZES: [usize; 3] = [6, 4, 4];
pub const DEFAULT_TOP_K: usize = 16;
pub const DEFAULT_MEMORY: usize = 4096;
pub const DEFAULT_HIDDEN: usize = 16;
pub const TIME_FEATURES: usize = 5;

impl HmNetConfig {
    /// Input 96, levels (6, 4, 4), K = 16, M = 4096, both modules on at
    /// every level.
    pub fn standard(num_variables: usize, horizon: usize) -> Self {
        Self {
            input_length: DEFAULT_INPUT_LENGTH,
            horizon,
            num_variables,
            hidden_dim: DEFAULT_HIDDEN,
            levels: DEFAULT_BLOCK_SIZES
                .iter()
                .map(|&s| LevelConfig::new(s))
                .collect(),
            time_feature_dim: TIME_FEATURES,
            activation: Activation::Gelu,
            seed: 0,
        }
    }

    pub fn with_blocks(mut self, input_length: usize, blocks: &[usize]) -> Self {
        self.input_length = input_length;
        self.levels = blocks.iter().map(|&s| LevelConfig::new(s)).collect();
        self
    }

    pub fn set_memory(&mut self, capacity: usize, top_k: usize) {
        for l in &mut self.levels {
            l.memory_capacity = capacity;
            l.top_k = top_k;
        }
    }

    pub fn set_switches(&mut self, interact: bool, denoise: bool) {
        for l in &mut self.levels {
            l.enable_interact = interact;
            l.enable_denoise = denoise;
        }
    }

    /// Number of output positions at each level.
    pub fn positions(&self) -> Vec<usize> {
        let mut len = self.input_length;
        self.levels
            .iter()
            .map(|l| {
                len /= l.block_size.max(1);
                len
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("input_length", self.input_length),
            ("horizon", self.horizon),
            ("num_variables", self.num_variables),
            ("hidden_dim", self.hidden_dim),
        ];
        for (name, v) in named {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if self.levels.is_empty() {
            return Err(Error::config("at least one level is required"));
        }
        let mut len = self.input_length;
        for (i, l) in self.levels.iter().enumerate() {
            if l.block_size == 0 {
                return Err(Error::config(format!("level {i}: block_size must be at least 1")));
            }
            if !len.is_multiple_of(l.block_size) {
                let blocks: Vec<String> =
                    self.levels.iter().map(|l| l.block_size.to_string()).collect();
                return Err(Error::config(format!(
                    "block sizes [{}] do not divide input length {}: at level {i}, {len} % {} = {}",
                    blocks.join(", "),
                    self.input_length,
                    l.block_size,
                    len % l.block_size
                )));
            }
            len /= l.block_size;
            if l.enable_denoise && (l.memory_capacity == 0 || l.top_k == 0) {
                return Err(Error::config(format!(
                    "level {i}: denoising needs memory_capacity >= 1 and top_k >= 1, got {} and {}",
                    l.memory_capacity, l.top_k
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_positions() {
        let c = HmNetConfig::standard(7, 96);
        c.validate().unwrap();
        assert_eq!(c.positions(), vec![16, 4, 1]);
    }

    #[test]
    fn bad_block_product_shows_arithmetic() {
        let c = HmNetConfig::standard(7, 96).with_blocks(96, &[6, 4, 5]);
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("4 % 5 = 4"), "{msg}");
    }

    #[test]
    fn zero_sizes_rejected() {
        let mut c = HmNetConfig::standard(7, 96);
        c.hidden_dim = 0;
        assert!(c.validate().is_err());
        let c = HmNetConfig::standard(7, 96).with_blocks(96, &[]);
        assert!(c.validate().is_err());
    }
}
