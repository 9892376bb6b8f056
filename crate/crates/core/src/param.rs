//! Named trainable parameters.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor. Entries where `mask` is `true` are pinned to `0.0`.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub mask: Option<Vec<bool>>,
}

impl Parameter {
    pub fn apply_mask(&mut self) {
        if let Some(mask) = &self.mask {
            for (v, &pinned) in self.tensor.data_mut().iter_mut().zip(mask) {
                if pinned {
                    *v = 0.0;
                }
            }
        }
    }

    /// Largest absolute value among masked entries (0 when the mask holds).
    pub fn mask_violation(&self) -> f64 {
        match &self.mask {
            Some(mask) => self
                .tensor
                .data()
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(v, _)| v.abs())
                .fold(0.0, f64::max),
            None => 0.0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor) -> ParamId {
        tensor.set_requires_grad(true);
        self.params.push(Parameter {
            name: name.into(),
            tensor,
            mask: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_masked(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor,
        mask: Vec<bool>,
    ) -> Result<ParamId> {
        if mask.len() != tensor.len() {
            return Err(Error::shape(format!(
                "mask of length {} for parameter of shape {:?}",
                mask.len(),
                tensor.shape()
            )));
        }
        let id = self.add(name, tensor);
        let p = &mut self.params[id.0];
        p.mask = Some(mask);
        p.apply_mask();
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    pub fn apply_masks(&mut self) {
        self.params.iter_mut().for_each(Parameter::apply_mask);
    }

    /// Copies of all parameter values, in id order.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params
            .iter()
            .map(|p| p.tensor.data().to_vec())
            .collect()
    }

    pub fn restore(&mut self, values: &[Vec<f64>]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::shape(format!(
                "snapshot holds {} parameters, store has {}",
                values.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if v.len() != p.tensor.len() {
                return Err(Error::shape(format!(
                    "snapshot for {} has {} values, expected {}",
                    p.name,
                    v.len(),
                    p.tensor.len()
                )));
            }
            p.tensor.data_mut().copy_from_slice(v);
        }
        Ok(())
    }
}
