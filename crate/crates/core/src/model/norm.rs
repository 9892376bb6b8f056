//! Reversible per-window instance normalization.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const INSTANCE_EPS: f64 = 1e-5;

/// Per-sample, per-variable statistics of an input window.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceStats {
    pub batch: usize,
    pub vars: usize,
    /// `[batch, vars]`.
    pub mean: Vec<f64>,
    /// `std + eps`, `[batch, vars]`.
    pub scale: Vec<f64>,
}

/// Normalizes `x: [batch, t, vars]` per sample and variable to zero mean and
/// unit (population) standard deviation.
pub fn instance_normalize(x: &Tensor) -> Result<(Tensor, InstanceStats)> {
    let &[batch, t, vars] = x.shape() else {
        return Err(Error::shape(format!(
            "instance_normalize expects [batch, time, vars], got {:?}",
            x.shape()
        )));
    };
    let d = x.data();
    let mut mean = vec![0.0; batch * vars];
    let mut scale = vec![0.0; batch * vars];
    for b in 0..batch {
        for n in 0..vars {
            let at = |i: usize| d[(b * t + i) * vars + n];
            let mu = (0..t).map(at).sum::<f64>() / t as f64;
            let var = (0..t).map(|i| (at(i) - mu).powi(2)).sum::<f64>() / t as f64;
            mean[b * vars + n] = mu;
            scale[b * vars + n] = var.sqrt() + INSTANCE_EPS;
        }
    }
    let mut out = d.to_vec();
    for (i, v) in out.iter_mut().enumerate() {
        let b = i / (t * vars);
        let n = i % vars;
        *v = (*v - mean[b * vars + n]) / scale[b * vars + n];
    }
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        InstanceStats {
            batch,
            vars,
            mean,
            scale,
        },
    ))
}

/// Inverse of [`instance_normalize`] applied to a `[batch, horizon, vars]`
/// forecast.
pub fn instance_denormalize(y: &Tensor, stats: &InstanceStats) -> Result<Tensor> {
    let (scale, shift) = stats.broadcast(y.shape())?;
    let data = y
        .data()
        .iter()
        .zip(scale.data().iter().zip(shift.data()))
        .map(|(v, (s, m))| v * s + m)
        .collect();
    Tensor::new(y.shape().to_vec(), data)
}

impl InstanceStats {
    /// Scale and shift expanded to `[batch, len, vars]`.
    pub fn broadcast(&self, shape: &[usize]) -> Result<(Tensor, Tensor)> {
        let &[batch, len, vars] = shape else {
            return Err(Error::shape(format!("expected [batch, len, vars], got {shape:?}")));
        };
        if batch != self.batch || vars != self.vars {
            return Err(Error::shape(format!(
                "stats for [{}, _, {}] applied to {shape:?}",
                self.batch, self.vars
            )));
        }
        let pick = |src: &[f64]| {
            Tensor::from_fn(shape, |i| {
                let b = i / (len * vars);
                src[b * vars + i % vars]
            })
        };
        Ok((pick(&self.scale), pick(&self.mean)))
    }
}
