//! Trend/residual decomposition and input-noise injection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_KERNEL: usize = 25;

/// Centered moving average along time with edge replication, per variable.
/// `x: [T, N]`. Returns `(trend, residual)` with `residual = x - trend`.
pub fn decompose(x: &[f64], n: usize, kernel: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0 && kernel > 0 && x.len().is_multiple_of(n), "bad decompose shape");
    let t = x.len() / n;
    let front = (kernel - 1) / 2;
    let clamp = |i: isize| i.clamp(0, t as isize - 1) as usize;
    let mut trend = vec![0.0; x.len()];
    for var in 0..n {
        for step in 0..t {
            let lo = step as isize - front as isize;
            let sum: f64 = (0..kernel as isize)
                .map(|k| x[clamp(lo + k) * n + var])
                .sum();
            trend[step * n + var] = sum / kernel as f64;
        }
    }
    let residual = x.iter().zip(&trend).map(|(a, b)| a - b).collect();
    (trend, residual)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSetting {
    /// Noise added to the residual only.
    ResidualOnly,
    /// The same draw added to both trend and residual.
    TrendAndResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub setting: NoiseSetting,
    pub mean: f64,
    pub std: f64,
    pub probability: f64,
    pub seed: u64,
}

impl NoiseSpec {
    /// N(0, 1) on the residual.
    pub fn residual(probability: f64, seed: u64) -> NoiseSpec {
        NoiseSpec { setting: NoiseSetting::ResidualOnly, mean: 0.0, std: 1.0, probability, seed }
    }

    /// N(1, 1) on trend and residual.
    pub fn trend_and_residual(probability: f64, seed: u64) -> NoiseSpec {
        NoiseSpec { setting: NoiseSetting::TrendAndResidual, mean: 1.0, std: 1.0, probability, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::config(format!("noise probability {} outside [0, 1]", self.probability)));
        }
        if !(self.std >= 0.0 && self.std.is_finite() && self.mean.is_finite()) {
            return Err(Error::config(format!("bad noise N({}, {}^2)", self.mean, self.std)));
        }
        Ok(())
    }

    /// Generator for one window, so a window gets the same noise however the
    /// evaluation is batched.
    pub fn rng_for(&self, window_start: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(window_start as u64);
        rng
    }
}

/// Perturbs an input window `[T, N]` in place and returns how many steps
/// were hit. Each step is perturbed with probability `p`, drawing one value
/// per variable. Adding to the residual and recomposing equals adding to the
/// raw value; adding the same draw to trend and residual adds it twice.
pub fn inject_noise(window: &mut [f64], n: usize, spec: &NoiseSpec, rng: &mut impl Rng) -> Result<usize> {
    spec.validate()?;
    if spec.probability == 0.0 {
        return Ok(0);
    }
    let normal = Normal::new(spec.mean, spec.std)
        .map_err(|e| Error::config(format!("noise distribution: {e}")))?;
    let (trend, residual) = decompose(window, n, DEFAULT_KERNEL);
    let mut hit = 0;
    for (step, (tr, re)) in trend.chunks_exact(n).zip(residual.chunks_exact(n)).enumerate() {
        if !rng.random_bool(spec.probability) {
            continue;
        }
        hit += 1;
        for var in 0..n {
            let e = normal.sample(rng);
            let (tr, re) = match spec.setting {
                NoiseSetting::ResidualOnly => (tr[var], re[var] + e),
                NoiseSetting::TrendAndResidual => (tr[var] + e, re[var] + e),
            };
            window[step * n + var] = tr + re;
        }
    }
    Ok(hit)
}
