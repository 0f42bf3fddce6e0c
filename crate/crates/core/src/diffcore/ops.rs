//! Forward operations and their hand-derived backward passes.
//!
//! Every `*_backward` function *accumulates* into the gradient buffers it is
//! handed, so contributions from several uses of one parameter simply add up.

use super::array::{axpy, dot, norm, Array2};
use crate::error::{Error, Result};

/// Norms at or below this are treated as zero by [`cosine`].
pub const COSINE_EPS: f64 = 1e-12;

pub fn embed_lookup(table: &Array2, ids: &[usize]) -> Result<Array2> {
    let mut out = Array2::zeros(ids.len(), table.cols());
    for (i, &id) in ids.iter().enumerate() {
        if id >= table.rows() {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: table.rows(),
            });
        }
        out.row_mut(i).copy_from_slice(table.row(id));
    }
    Ok(out)
}

/// Scatters `upstream` rows into the looked-up rows of `grad_table`.
pub fn embed_lookup_backward(grad_table: &mut Array2, ids: &[usize], upstream: &Array2) {
    for (i, &id) in ids.iter().enumerate() {
        axpy(grad_table.row_mut(id), upstream.row(i), 1.0);
    }
}

/// Valid-mode 1-D convolution along the rows of `x`.
///
/// `filters` is `d_out x (k * d_in)`; filter `j` at offset `u`, input channel
/// `i` lives at column `u * d_in + i`. Output row `t` sees input rows
/// `t..t + k`, so the result has `L - k + 1` rows.
pub fn conv1d_seq(
    x: &Array2,
    filters: &Array2,
    bias: &[f64],
    k: usize,
    relu: bool,
) -> Result<Array2> {
    let (len, d_in) = x.shape();
    check_conv_shapes(len, d_in, filters, bias, k)?;
    let c = len - k + 1;
    let d_out = filters.rows();
    let span = k * d_in;
    let flat = x.as_slice();
    let mut out = Array2::zeros(c, d_out);
    for t in 0..c {
        let window = &flat[t * d_in..t * d_in + span];
        let row = out.row_mut(t);
        for (j, o) in row.iter_mut().enumerate() {
            let v = bias[j] + dot(filters.row(j), window);
            *o = if relu { v.max(0.0) } else { v };
        }
    }
    Ok(out)
}

fn check_conv_shapes(
    len: usize,
    d_in: usize,
    filters: &Array2,
    bias: &[f64],
    k: usize,
) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("kernel width must be at least 1".into()));
    }
    if len < k {
        return Err(Error::SequenceTooShort { len, kernel: k });
    }
    if filters.cols() != k * d_in {
        return Err(Error::Shape(format!(
            "filters have {} columns, expected k*d_in = {}",
            filters.cols(),
            k * d_in
        )));
    }
    if bias.len() != filters.rows() {
        return Err(Error::Shape(format!(
            "bias has {} entries for {} filters",
            bias.len(),
            filters.rows()
        )));
    }
    Ok(())
}

/// Backward pass of [`conv1d_seq`]. `out` is the forward output (used for
/// the ReLU gate). Returns the gradient w.r.t. `x`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_seq_backward(
    x: &Array2,
    filters: &Array2,
    out: &Array2,
    k: usize,
    relu: bool,
    grad_out: &Array2,
    grad_filters: &mut Array2,
    grad_bias: &mut [f64],
) -> Array2 {
    let (len, d_in) = x.shape();
    let span = k * d_in;
    let flat = x.as_slice();
    let mut dx = Array2::zeros(len, d_in);
    for t in 0..out.rows() {
        let window = &flat[t * d_in..t * d_in + span];
        for j in 0..filters.rows() {
            let mut g = grad_out.get(t, j);
            if relu && out.get(t, j) <= 0.0 {
                g = 0.0;
            }
            if g == 0.0 {
                continue;
            }
            grad_bias[j] += g;
            axpy(grad_filters.row_mut(j), window, g);
            axpy(
                &mut dx.as_mut_slice()[t * d_in..t * d_in + span],
                filters.row(j),
                g,
            );
        }
    }
    dx
}

/// Column means over the rows flagged valid.
pub fn mean_pool_rows(x: &Array2, valid: &[bool]) -> Result<Vec<f64>> {
    if valid.len() != x.rows() {
        return Err(Error::Shape(format!(
            "mask has {} entries for {} rows",
            valid.len(),
            x.rows()
        )));
    }
    let n = valid.iter().filter(|&&v| v).count();
    if n == 0 {
        return Err(Error::EmptyPool);
    }
    let mut out = vec![0.0; x.cols()];
    for (r, _) in valid.iter().enumerate().filter(|(_, &v)| v) {
        axpy(&mut out, x.row(r), 1.0);
    }
    let inv = 1.0 / n as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

/// Spreads `grad` uniformly over the valid rows of `dx`.
pub fn mean_pool_rows_backward(dx: &mut Array2, valid: &[bool], grad: &[f64]) {
    let n = valid.iter().filter(|&&v| v).count();
    if n == 0 {
        return;
    }
    let inv = 1.0 / n as f64;
    for (r, _) in valid.iter().enumerate().filter(|(_, &v)| v) {
        axpy(dx.row_mut(r), grad, inv);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool {
    pub values: Vec<f64>,
    /// Winning row per column; the first maximal row on ties.
    pub argmax: Vec<usize>,
}

pub fn max_pool_rows(x: &Array2) -> Result<MaxPool> {
    if x.rows() == 0 {
        return Err(Error::EmptyPool);
    }
    let mut values = x.row(0).to_vec();
    let mut argmax = vec![0; x.cols()];
    for r in 1..x.rows() {
        for (c, &v) in x.row(r).iter().enumerate() {
            if v > values[c] {
                values[c] = v;
                argmax[c] = r;
            }
        }
    }
    Ok(MaxPool { values, argmax })
}

pub fn max_pool_rows_backward(dx: &mut Array2, pool: &MaxPool, grad: &[f64]) {
    for (c, (&r, &g)) in pool.argmax.iter().zip(grad).enumerate() {
        let cur = dx.get(r, c);
        dx.set(r, c, cur + g);
    }
}

/// Cosine similarity. A side whose norm is at most [`COSINE_EPS`] yields 0.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let (nu, nv) = (norm(u), norm(v));
    if nu <= COSINE_EPS || nv <= COSINE_EPS {
        return 0.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

/// Gradients of `cosine(u, v)` w.r.t. `u` and `v`, scaled by `upstream`.
pub fn cosine_backward(u: &[f64], v: &[f64], upstream: f64) -> (Vec<f64>, Vec<f64>) {
    let (nu, nv) = (norm(u), norm(v));
    if nu <= COSINE_EPS || nv <= COSINE_EPS {
        return (vec![0.0; u.len()], vec![0.0; v.len()]);
    }
    let cos = dot(u, v) / (nu * nv);
    let inv = 1.0 / (nu * nv);
    let du = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| upstream * (b * inv - cos * a / (nu * nu)))
        .collect();
    let dv = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| upstream * (a * inv - cos * b / (nv * nv)))
        .collect();
    (du, dv)
}

/// `w x + b` with `w` shaped `out x in`.
pub fn affine(x: &[f64], w: &Array2, b: &[f64]) -> Vec<f64> {
    (0..w.rows()).map(|o| dot(w.row(o), x) + b[o]).collect()
}

/// Accumulates weight/bias gradients and returns `dx`.
pub fn affine_backward(
    x: &[f64],
    w: &Array2,
    dy: &[f64],
    grad_w: &mut Array2,
    grad_b: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; x.len()];
    for (o, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grad_b[o] += g;
        axpy(grad_w.row_mut(o), x, g);
        axpy(&mut dx, w.row(o), g);
    }
    dx
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Gates `dy` by the forward output of [`relu`].
pub fn relu_backward(out: &[f64], dy: &[f64]) -> Vec<f64> {
    out.iter()
        .zip(dy)
        .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
        .collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

/// Gradient through softmax given its output `p` and upstream `dp`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner = dot(p, dp);
    p.iter().zip(dp).map(|(&pi, &g)| pi * (g - inner)).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean binary cross entropy over the entries of `logits`.
pub fn bce(logits: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(logits.len(), targets.len());
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| softplus(z) - y * z)
        .sum::<f64>()
        / n
}

pub fn bce_backward(logits: &[f64], targets: &[f64], upstream: f64) -> Vec<f64> {
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| upstream * (sigmoid(z) - y) / n)
        .collect()
}
