//! Central finite-difference gradient checking.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so that components whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `max |a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
}

impl GradCheckReport {
    fn from_pairs(analytic: Vec<f64>, numeric: Vec<f64>) -> Self {
        let mut max_rel_error = 0.0;
        let mut max_abs_error: f64 = 0.0;
        let mut worst_index = 0;
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let abs = (a - n).abs();
            let rel = abs / a.abs().max(n.abs()).max(REL_ERROR_FLOOR);
            max_abs_error = max_abs_error.max(abs);
            if rel > max_rel_error {
                max_rel_error = rel;
                worst_index = i;
            }
        }
        Self {
            analytic,
            numeric,
            max_rel_error,
            max_abs_error,
            worst_index,
        }
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

fn scalar_of(g: &Graph, v: Var) -> Result<f64> {
    g.value(v).item()
}

/// Compares the gradient of `f` at `x` against central differences.
pub fn finite_diff_check<F>(f: F, x: &Tensor, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.variable(x.clone());
    let out = f(&mut g, xv)?;
    g.backward(out)?;
    let analytic = g.grad_or_zeros(xv);

    let eval = |probe: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.variable(probe);
        let out = f(&mut g, v)?;
        scalar_of(&g, out)
    };
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * step));
    }
    Ok(GradCheckReport::from_pairs(analytic, numeric))
}

/// Checks gradients w.r.t. every trainable parameter entry of `store`.
/// `f` must be deterministic and must not mutate anything outside the graph.
pub fn check_param_grads<F>(store: &ParamStore, f: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut work = store.clone();
    work.zero_grads();
    let mut g = Graph::new();
    let loss = f(&mut g, &work)?;
    g.backward(loss)?;
    g.accumulate_param_grads(&mut work)?;

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let ids: Vec<_> = work.ids().collect();
    for id in ids {
        if !work.get(id).tensor.requires_grad() {
            continue;
        }
        let n = work.get(id).tensor.len();
        let grad = work
            .get(id)
            .tensor
            .grad()
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; n]);
        let mask = work.get(id).mask.clone();
        for i in 0..n {
            if mask.as_ref().is_some_and(|m| m[i]) {
                continue;
            }
            let orig = work.get(id).tensor.data()[i];
            let mut at = |v: f64| -> Result<f64> {
                work.get_mut(id).tensor.data_mut()[i] = v;
                let mut g = Graph::new();
                let out = f(&mut g, &work)?;
                scalar_of(&g, out)
            };
            let up = at(orig + step)?;
            let down = at(orig - step)?;
            work.get_mut(id).tensor.data_mut()[i] = orig;
            analytic.push(grad[i]);
            numeric.push((up - down) / (2.0 * step));
        }
    }
    if analytic.is_empty() {
        return Err(Error::Autograd("no trainable parameters to check".into()));
    }
    Ok(GradCheckReport::from_pairs(analytic, numeric))
}
