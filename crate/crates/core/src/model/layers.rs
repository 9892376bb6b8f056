//! The building blocks of an MC-Block and the predictor, as graph functions.
//!
//! All weight matrices are stored `[in, out]` and applied as `x @ W`.

use crate::autograd::{Contraction, Graph, Var};
use crate::error::{Error, Result};
use crate::memory::PatternMemory;
use crate::tensor::Tensor;

use super::config::Activation;

fn activate(g: &mut Graph, x: Var, act: Activation) -> Var {
    match act {
        Activation::Gelu => g.gelu(x),
        Activation::Identity => x,
    }
}

/// `h[b, t, n, :] = x[b, t, n] * value_w[n, :] + tf[b, t, :] @ time_w + bias`.
///
/// `x: [B, T, N]`, `time_feats: [B, T, F]` (or `None` when F = 0),
/// `value_w: [N, d]`, `time_w: [F, d]`, `bias: [d]`. Returns `[B, T, N, d]`.
pub fn embed_variables(
    g: &mut Graph,
    x: Var,
    time_feats: Option<Var>,
    value_w: Var,
    time_w: Option<Var>,
    bias: Var,
) -> Result<Var> {
    let h = g.embed_values(x, value_w)?;
    let h = match (time_feats, time_w) {
        (Some(tf), Some(tw)) => {
            let proj = g.matmul(tf, tw, Contraction::Last)?;
            g.add_expand(h, proj, 2)?
        }
        (None, None) => h,
        _ => {
            return Err(Error::shape(
                "time features and time projection must both be present or both absent",
            ))
        }
    };
    g.add_bias(h, bias)
}

/// Gated mixing of each variable with a zero-diagonal combination of the
/// others, along axis 2 of `h: [B, T, N, d]`.
///
/// `v = h @_vars W_v`, `alpha = sigmoid((h | v) @_vars W_alpha)`,
/// `h_v = alpha * h + (1 - alpha) * v`. Returns `(h_v, alpha)`.
pub fn dynamic_variable_interaction(
    g: &mut Graph,
    h: Var,
    w_v: Var,
    w_alpha: Var,
) -> Result<(Var, Var)> {
    let wv = g.value(w_v);
    let &[n, n2] = wv.shape() else {
        return Err(Error::shape(format!("W_v must be square, got {:?}", wv.shape())));
    };
    if n != n2 {
        return Err(Error::shape(format!("W_v must be square, got {:?}", wv.shape())));
    }
    if let Some(i) = (0..n).find(|&i| wv.data()[i * n + i] != 0.0) {
        return Err(Error::Invariant(format!(
            "diag(W_v) must be zero: W_v[{i},{i}] = {}",
            wv.data()[i * n + i]
        )));
    }
    let v = g.matmul(h, w_v, Contraction::Axis(2))?;
    let hv = g.concat(h, v, 2)?;
    let pre = g.matmul(hv, w_alpha, Contraction::Axis(2))?;
    let alpha = g.sigmoid(pre);
    let mixed = g.gate(alpha, h, v)?;
    Ok((mixed, alpha))
}

/// Non-overlapping block convolution per variable, then the activation.
pub fn convolution_unit(
    g: &mut Graph,
    h_v: Var,
    weight: Var,
    bias: Var,
    act: Activation,
) -> Result<Var> {
    let c = g.blocked_conv1d(h_v, weight, bias)?;
    Ok(activate(g, c, act))
}

/// Projections used by [`adaptive_denoise`], each `[d, d]` except `w_beta`
/// which is `[2d, d]`.
#[derive(Debug, Clone, Copy)]
pub struct DenoiseWeights {
    pub u: Var,
    pub v: Var,
    pub w: Var,
    pub w_beta: Var,
}

/// Intermediate values of one denoising pass.
#[derive(Debug, Clone)]
pub struct DenoiseTrace {
    pub output: Var,
    /// `[Q, d]` with `Q = B * P * N`; `None` when the memory was empty.
    pub beta: Option<Var>,
    /// `[Q, 1, K_eff]`.
    pub kappa: Option<Var>,
    /// Retrieved patterns as a constant leaf, `[Q, K_eff, d]`.
    pub patterns: Option<Var>,
    pub k_effective: usize,
    /// Unit-norm query cells in `(sample, position, variable)` order, ready to
    /// be written into the memory after the pass.
    pub queries: Vec<f64>,
}

/// Retrieval-based denoising of every `(position, variable)` cell of
/// `h_c: [B, P, N, d]`.
///
/// The query is the L2-normalized cell; the top-K stored patterns `s` enter
/// as constants. `kappa = softmax((q @ V) . (s @ W) / sqrt(d))`,
/// `h_s = kappa . (s @ U)`, `beta = sigmoid((h_c | h_s) @ W_beta)`,
/// `h_d = beta * h_c + (1 - beta) * h_s`. With an empty memory `h_d = h_c`.
pub fn adaptive_denoise(
    g: &mut Graph,
    h_c: Var,
    memory: &PatternMemory,
    top_k: usize,
    weights: DenoiseWeights,
) -> Result<DenoiseTrace> {
    let shape = g.shape(h_c).to_vec();
    let d = *shape
        .last()
        .ok_or_else(|| Error::shape("adaptive_denoise on a scalar"))?;
    if d != memory.dim() {
        return Err(Error::shape(format!(
            "features of width {d} against a memory of dim {}",
            memory.dim()
        )));
    }
    let q = g.value(h_c).len() / d;
    let flat = g.reshape(h_c, &[q, d])?;
    let unit = g.l2_normalize(flat)?;
    let queries = g.value(unit).data().to_vec();

    let found = memory.top_k_batch(&queries, top_k)?;
    let k = found.k_effective;
    if k == 0 {
        return Ok(DenoiseTrace {
            output: h_c,
            beta: None,
            kappa: None,
            patterns: None,
            k_effective: 0,
            queries,
        });
    }
    let s = g.input(Tensor::new(vec![q, k, d], found.patterns)?);

    // (s @ W) . q' is computed as s . (q' @ W^T), and kappa . (s @ U) as
    // (kappa . s) @ U, so the projections run once per query, not per pattern.
    let query = g.matmul(unit, weights.v, Contraction::Last)?;
    let query = g.reshape(query, &[1, q, d])?;
    let w = g.reshape(weights.w, &[1, d, d])?;
    let query = g.matmul(query, w, Contraction::Batched { transpose_rhs: true })?;
    let query = g.reshape(query, &[q, 1, d])?;
    let scores = g.matmul(query, s, Contraction::Batched { transpose_rhs: true })?;
    let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
    let kappa = g.softmax(scores, 2)?;
    let mixed_patterns = g.matmul(kappa, s, Contraction::Batched { transpose_rhs: false })?;
    let mixed_patterns = g.reshape(mixed_patterns, &[q, d])?;
    let h_s = g.matmul(mixed_patterns, weights.u, Contraction::Last)?;

    let both = g.concat(flat, h_s, 1)?;
    let pre = g.matmul(both, weights.w_beta, Contraction::Last)?;
    let beta = g.sigmoid(pre);
    let mixed = g.gate(beta, flat, h_s)?;
    let output = g.reshape(mixed, &shape)?;
    Ok(DenoiseTrace {
        output,
        beta: Some(beta),
        kappa: Some(kappa),
        patterns: Some(s),
        k_effective: k,
        queries,
    })
}

/// Concatenates the `P` position vectors of each variable and projects them:
/// `[B, P, N, d] -> [B, N, P*d] @ W_l + b_l -> [B, N, d]`.
pub fn level_aggregate(g: &mut Graph, h_d: Var, weight: Var, bias: Var) -> Result<Var> {
    let &[b, p, n, d] = g.shape(h_d) else {
        return Err(Error::shape(format!(
            "level_aggregate expects [B, P, N, d], got {:?}",
            g.shape(h_d)
        )));
    };
    let by_var = g.permute(h_d, &[0, 2, 1, 3])?;
    let flat = g.reshape(by_var, &[b, n, p * d])?;
    let f = g.matmul(flat, weight, Contraction::Last)?;
    g.add_bias(f, bias)
}

/// Two-layer MLP over the sum of the level representations, shared across
/// variables: `[B, N, d] -> [B, N, H]`, returned as `[B, H, N]`.
pub struct HeadWeights {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

pub fn predict(g: &mut Graph, levels: &[Var], head: &HeadWeights, act: Activation) -> Result<Var> {
    let (&first, rest) = levels
        .split_first()
        .ok_or_else(|| Error::shape("predict needs at least one level"))?;
    let mut total = first;
    for &f in rest {
        total = g.add(total, f)?;
    }
    let hidden = g.matmul(total, head.w1, Contraction::Last)?;
    let hidden = g.add_bias(hidden, head.b1)?;
    let hidden = activate(g, hidden, act);
    let out = g.matmul(hidden, head.w2, Contraction::Last)?;
    let out = g.add_bias(out, head.b2)?;
    g.permute(out, &[0, 2, 1])
}
