//! Forward and backward kernels over flat row-major slices.
//!
//! Every kernel writes each output element from exactly one closure call and
//! accumulates in a fixed order, so the parallel and sequential builds produce
//! bit-identical results.

use crate::par::for_each_chunk;

/// Contraction of axis `m` of a `[pre, m, post]` tensor against a `[m, j]`
/// matrix, giving `[pre, j, post]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisLayout {
    pub pre: usize,
    pub m: usize,
    pub post: usize,
    pub j: usize,
}

impl AxisLayout {
    fn work(&self) -> usize {
        self.pre * self.m * self.post * self.j
    }
}

pub fn contract_axis(x: &[f64], w: &[f64], l: AxisLayout) -> Vec<f64> {
    let AxisLayout { m, post, j, .. } = l;
    let mut out = vec![0.0; l.pre * j * post];
    for_each_chunk(&mut out, j * post, l.work(), |p, o| {
        let xb = &x[p * m * post..(p + 1) * m * post];
        if post == 1 {
            for (mi, &xv) in xb.iter().enumerate() {
                let wr = &w[mi * j..(mi + 1) * j];
                for (o, wv) in o.iter_mut().zip(wr) {
                    *o += xv * wv;
                }
            }
        } else {
            for mi in 0..m {
                let xr = &xb[mi * post..(mi + 1) * post];
                for ji in 0..j {
                    let wv = w[mi * j + ji];
                    let or = &mut o[ji * post..(ji + 1) * post];
                    for (o, xv) in or.iter_mut().zip(xr) {
                        *o += xv * wv;
                    }
                }
            }
        }
    });
    out
}

pub fn contract_axis_grad_x(dout: &[f64], w: &[f64], l: AxisLayout) -> Vec<f64> {
    let AxisLayout { m, post, j, .. } = l;
    let mut dx = vec![0.0; l.pre * m * post];
    for_each_chunk(&mut dx, m * post, l.work(), |p, d| {
        let gb = &dout[p * j * post..(p + 1) * j * post];
        if post == 1 {
            for (mi, dv) in d.iter_mut().enumerate() {
                let wr = &w[mi * j..(mi + 1) * j];
                *dv = wr.iter().zip(gb).map(|(a, b)| a * b).sum();
            }
        } else {
            for mi in 0..m {
                let dr = &mut d[mi * post..(mi + 1) * post];
                for ji in 0..j {
                    let wv = w[mi * j + ji];
                    let gr = &gb[ji * post..(ji + 1) * post];
                    for (dd, g) in dr.iter_mut().zip(gr) {
                        *dd += g * wv;
                    }
                }
            }
        }
    });
    dx
}

pub fn contract_axis_grad_w(x: &[f64], dout: &[f64], l: AxisLayout) -> Vec<f64> {
    let AxisLayout { pre, m, post, j } = l;
    let mut dw = vec![0.0; m * j];
    for_each_chunk(&mut dw, j, l.work(), |mi, row| {
        for p in 0..pre {
            let xb = &x[p * m * post + mi * post..p * m * post + (mi + 1) * post];
            let gb = &dout[p * j * post..(p + 1) * j * post];
            if post == 1 {
                let xv = xb[0];
                for (r, g) in row.iter_mut().zip(gb) {
                    *r += xv * g;
                }
            } else {
                for (ji, r) in row.iter_mut().enumerate() {
                    let gr = &gb[ji * post..(ji + 1) * post];
                    *r += xb.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    });
    dw
}

/// Batched matrix product `[g, m, k] x [g, k, n] -> [g, m, n]`; with
/// `transpose_rhs` the right operand is laid out `[g, n, k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchLayout {
    pub g: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub transpose_rhs: bool,
}

impl BatchLayout {
    fn work(&self) -> usize {
        self.g * self.m * self.k * self.n
    }

    #[inline]
    fn rhs(&self, b: &[f64], g: usize, kk: usize, jj: usize) -> f64 {
        if self.transpose_rhs {
            b[(g * self.n + jj) * self.k + kk]
        } else {
            b[(g * self.k + kk) * self.n + jj]
        }
    }
}

pub fn batched_matmul(a: &[f64], b: &[f64], l: BatchLayout) -> Vec<f64> {
    let BatchLayout { m, k, n, .. } = l;
    let mut out = vec![0.0; l.g * m * n];
    for_each_chunk(&mut out, m * n, l.work(), |g, o| {
        for i in 0..m {
            let ar = &a[(g * m + i) * k..(g * m + i + 1) * k];
            for jj in 0..n {
                let mut acc = 0.0;
                for (kk, av) in ar.iter().enumerate() {
                    acc += av * l.rhs(b, g, kk, jj);
                }
                o[i * n + jj] = acc;
            }
        }
    });
    out
}

pub fn batched_matmul_grad_a(dout: &[f64], b: &[f64], l: BatchLayout) -> Vec<f64> {
    let BatchLayout { m, k, n, .. } = l;
    let mut da = vec![0.0; l.g * m * k];
    for_each_chunk(&mut da, m * k, l.work(), |g, d| {
        for i in 0..m {
            let gr = &dout[(g * m + i) * n..(g * m + i + 1) * n];
            for kk in 0..k {
                let mut acc = 0.0;
                for (jj, gv) in gr.iter().enumerate() {
                    acc += gv * l.rhs(b, g, kk, jj);
                }
                d[i * k + kk] = acc;
            }
        }
    });
    da
}

pub fn batched_matmul_grad_b(a: &[f64], dout: &[f64], l: BatchLayout) -> Vec<f64> {
    let BatchLayout { m, k, n, .. } = l;
    let mut db = vec![0.0; l.g * k * n];
    for_each_chunk(&mut db, k * n, l.work(), |g, d| {
        for i in 0..m {
            let ar = &a[(g * m + i) * k..(g * m + i + 1) * k];
            let gr = &dout[(g * m + i) * n..(g * m + i + 1) * n];
            for (kk, av) in ar.iter().enumerate() {
                for (jj, gv) in gr.iter().enumerate() {
                    let idx = if l.transpose_rhs { jj * k + kk } else { kk * n + jj };
                    d[idx] += av * gv;
                }
            }
        }
    });
    db
}

/// Non-overlapping block convolution over the time axis: input
/// `[pre, t, vars, d_in]`, kernel `[block, d_in, d_out]`, output
/// `[pre, t / block, vars, d_out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayout {
    pub pre: usize,
    pub t: usize,
    pub vars: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub block: usize,
}

impl ConvLayout {
    pub fn positions(&self) -> usize {
        self.t / self.block
    }

    fn work(&self) -> usize {
        self.pre * self.t * self.vars * self.d_in * self.d_out
    }
}

pub fn block_conv(x: &[f64], w: &[f64], bias: &[f64], l: ConvLayout) -> Vec<f64> {
    let ConvLayout {
        vars,
        d_in,
        d_out,
        block,
        ..
    } = l;
    let mut out = vec![0.0; l.pre * l.positions() * vars * d_out];
    // One chunk per (sample, output position); input rows c*block.. are
    // contiguous because t == positions * block.
    for_each_chunk(&mut out, vars * d_out, l.work(), |c, o| {
        for n in 0..vars {
            let on = &mut o[n * d_out..(n + 1) * d_out];
            on.copy_from_slice(bias);
            for jj in 0..block {
                let row = c * block + jj;
                let xr = &x[(row * vars + n) * d_in..(row * vars + n + 1) * d_in];
                for (i, &xv) in xr.iter().enumerate() {
                    let wr = &w[(jj * d_in + i) * d_out..(jj * d_in + i + 1) * d_out];
                    for (ov, wv) in on.iter_mut().zip(wr) {
                        *ov += xv * wv;
                    }
                }
            }
        }
    });
    out
}

pub fn block_conv_grad_x(dout: &[f64], w: &[f64], l: ConvLayout) -> Vec<f64> {
    let ConvLayout {
        vars,
        d_in,
        d_out,
        block,
        ..
    } = l;
    let mut dx = vec![0.0; l.pre * l.t * vars * d_in];
    for_each_chunk(&mut dx, vars * d_in, l.work(), |row, d| {
        let c = row / block;
        let jj = row % block;
        for n in 0..vars {
            let gr = &dout[(c * vars + n) * d_out..(c * vars + n + 1) * d_out];
            for i in 0..d_in {
                let wr = &w[(jj * d_in + i) * d_out..(jj * d_in + i + 1) * d_out];
                d[n * d_in + i] = wr.iter().zip(gr).map(|(a, b)| a * b).sum();
            }
        }
    });
    dx
}

pub fn block_conv_grad_w(x: &[f64], dout: &[f64], l: ConvLayout) -> Vec<f64> {
    let ConvLayout {
        vars,
        d_in,
        d_out,
        block,
        ..
    } = l;
    let cells = l.pre * l.positions();
    let mut dw = vec![0.0; block * d_in * d_out];
    for_each_chunk(&mut dw, d_out, l.work(), |r, acc| {
        let jj = r / d_in;
        let i = r % d_in;
        for c in 0..cells {
            let row = c * block + jj;
            for n in 0..vars {
                let xv = x[(row * vars + n) * d_in + i];
                let gr = &dout[(c * vars + n) * d_out..(c * vars + n + 1) * d_out];
                for (a, g) in acc.iter_mut().zip(gr) {
                    *a += xv * g;
                }
            }
        }
    });
    dw
}

/// Sums `[rows, width]` over its rows.
pub fn sum_rows(x: &[f64], width: usize) -> Vec<f64> {
    let mut acc = vec![0.0; width];
    for row in x.chunks_exact(width) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc
}

/// Softmax along the middle axis of `[pre, a, post]`.
pub fn softmax(x: &[f64], pre: usize, a: usize, post: usize) -> Vec<f64> {
    let mut out = vec![0.0; pre * a * post];
    for_each_chunk(&mut out, a * post, pre * a * post * 8, |p, o| {
        let xb = &x[p * a * post..(p + 1) * a * post];
        for q in 0..post {
            let max = (0..a)
                .map(|i| xb[i * post + q])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in 0..a {
                let e = (xb[i * post + q] - max).exp();
                o[i * post + q] = e;
                total += e;
            }
            for i in 0..a {
                o[i * post + q] /= total;
            }
        }
    });
    out
}

pub fn softmax_grad(y: &[f64], dy: &[f64], pre: usize, a: usize, post: usize) -> Vec<f64> {
    let mut dx = vec![0.0; pre * a * post];
    for_each_chunk(&mut dx, a * post, pre * a * post * 4, |p, d| {
        let base = p * a * post;
        for q in 0..post {
            let dot: f64 = (0..a)
                .map(|i| y[base + i * post + q] * dy[base + i * post + q])
                .sum();
            for i in 0..a {
                let idx = i * post + q;
                d[idx] = y[base + idx] * (dy[base + idx] - dot);
            }
        }
    });
    dx
}

/// Concatenates `[pre, a, post]` and `[pre, b, post]` along the middle axis.
pub fn concat(x: &[f64], y: &[f64], pre: usize, a: usize, b: usize, post: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(pre * (a + b) * post);
    for p in 0..pre {
        out.extend_from_slice(&x[p * a * post..(p + 1) * a * post]);
        out.extend_from_slice(&y[p * b * post..(p + 1) * b * post]);
    }
    out
}

/// Inverse of [`concat`]: splits the gradient back into both operands.
pub fn split(
    dout: &[f64],
    pre: usize,
    a: usize,
    b: usize,
    post: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut da = Vec::with_capacity(pre * a * post);
    let mut db = Vec::with_capacity(pre * b * post);
    let stride = (a + b) * post;
    for p in 0..pre {
        da.extend_from_slice(&dout[p * stride..p * stride + a * post]);
        db.extend_from_slice(&dout[p * stride + a * post..(p + 1) * stride]);
    }
    (da, db)
}

/// Reorders axes: output axis `i` is input axis `perm[i]`.
pub fn permute(x: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..x.len() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(x[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

/// Inverse permutation.
pub fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Scales each `width`-long row to unit L2 norm. Zero rows stay zero.
pub fn l2_normalize_rows(x: &[f64], width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; x.len()];
    let norms: Vec<f64> = x
        .chunks_exact(width)
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    for ((o, r), &n) in out
        .chunks_exact_mut(width)
        .zip(x.chunks_exact(width))
        .zip(&norms)
    {
        if n > 0.0 {
            for (ov, v) in o.iter_mut().zip(r) {
                *ov = v / n;
            }
        }
    }
    (out, norms)
}

pub fn l2_normalize_rows_grad(y: &[f64], norms: &[f64], dy: &[f64], width: usize) -> Vec<f64> {
    let mut dx = vec![0.0; y.len()];
    for (r, &n) in norms.iter().enumerate() {
        if n <= 0.0 {
            continue;
        }
        let yr = &y[r * width..(r + 1) * width];
        let gr = &dy[r * width..(r + 1) * width];
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for k in 0..width {
            dx[r * width + k] = (gr[k] - yr[k] * dot) / n;
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_swaps_axes() {
        // [2, 3] -> [3, 2]
        let x: Vec<f64> = (0..6).map(f64::from).collect();
        let y = permute(&x, &[2, 3], &[1, 0]);
        assert_eq!(y, vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        let back = permute(&y, &[3, 2], &invert_perm(&[1, 0]));
        assert_eq!(back, x);
    }

    #[test]
    fn concat_then_split() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0];
        let c = concat(&a, &b, 2, 2, 1, 1);
        assert_eq!(c, vec![1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let (da, db) = split(&c, 2, 2, 1, 1);
        assert_eq!(da, a);
        assert_eq!(db, b);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0).is_finite());
        assert!(sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
