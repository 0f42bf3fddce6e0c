//! Label-wise attention over text positions and the BCE objective.
//!
//! For label `j`, each valid position `t` is scored by `H_L[j] . T[t]`; the
//! softmax of those scores weights the positions into a context vector
//! `v_j`, and the logit is `w_j . v_j + b_j`.

use crate::diffcore::{axpy, bce, bce_backward, dot, sigmoid, softmax, Array2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    /// `N x c`; zero on invalid positions.
    pub weights: Array2,
    /// `N x d`
    pub context: Array2,
    pub logits: Vec<f64>,
}

pub fn predict_logits(
    t_final: &Array2,
    valid: &[bool],
    h_l: &Array2,
    weight: &Array2,
    bias: &[f64],
) -> Result<Attention> {
    let (c, d) = t_final.shape();
    let n = h_l.rows();
    if h_l.cols() != d || weight.shape() != (n, d) || bias.len() != n || valid.len() != c {
        return Err(Error::Shape(format!(
            "predictor: T {c}x{d}, H_L {}x{}, W {}x{}, b {}, mask {}",
            h_l.rows(),
            h_l.cols(),
            weight.rows(),
            weight.cols(),
            bias.len(),
            valid.len()
        )));
    }
    let positions: Vec<usize> = (0..c).filter(|&t| valid[t]).collect();
    if positions.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut weights = Array2::zeros(n, c);
    let mut context = Array2::zeros(n, d);
    let mut logits = Vec::with_capacity(n);
    let mut scores = vec![0.0; positions.len()];
    for j in 0..n {
        let q = h_l.row(j);
        for (s, &t) in scores.iter_mut().zip(&positions) {
            *s = dot(q, t_final.row(t));
        }
        let alpha = softmax(&scores);
        let v = context.row_mut(j);
        for (&a, &t) in alpha.iter().zip(&positions) {
            axpy(v, t_final.row(t), a);
        }
        for (&a, &t) in alpha.iter().zip(&positions) {
            weights.set(j, t, a);
        }
        logits.push(dot(weight.row(j), context.row(j)) + bias[j]);
    }
    Ok(Attention {
        weights,
        context,
        logits,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorGrads {
    pub t_final: Array2,
    pub h_l: Array2,
    pub weight: Array2,
    pub bias: Vec<f64>,
}

pub fn predict_logits_backward(
    t_final: &Array2,
    valid: &[bool],
    h_l: &Array2,
    weight: &Array2,
    att: &Attention,
    d_logits: &[f64],
) -> PredictorGrads {
    let (c, d) = t_final.shape();
    let n = h_l.rows();
    let positions: Vec<usize> = (0..c).filter(|&t| valid[t]).collect();
    let mut g = PredictorGrads {
        t_final: Array2::zeros(c, d),
        h_l: Array2::zeros(n, d),
        weight: Array2::zeros(n, d),
        bias: d_logits.to_vec(),
    };
    let mut d_alpha = vec![0.0; positions.len()];
    let mut dv = vec![0.0; d];
    for j in 0..n {
        let dl = d_logits[j];
        if dl == 0.0 {
            continue;
        }
        axpy(g.weight.row_mut(j), att.context.row(j), dl);
        dv.iter_mut()
            .zip(weight.row(j))
            .for_each(|(x, &w)| *x = dl * w);
        for (da, &t) in d_alpha.iter_mut().zip(&positions) {
            *da = dot(&dv, t_final.row(t));
        }
        let alpha_row = att.weights.row(j);
        let inner: f64 = positions
            .iter()
            .zip(&d_alpha)
            .map(|(&t, &da)| alpha_row[t] * da)
            .sum();
        let q = h_l.row(j);
        for (&t, &da) in positions.iter().zip(&d_alpha) {
            let a = alpha_row[t];
            let ds = a * (da - inner);
            let dt = g.t_final.row_mut(t);
            axpy(dt, &dv, a);
            axpy(dt, q, ds);
            axpy(g.h_l.row_mut(j), t_final.row(t), ds);
        }
    }
    g
}

/// Mean BCE over labels for one product.
pub fn classification_loss(logits: &[f64], gold_multihot: &[f64]) -> f64 {
    bce(logits, gold_multihot)
}

pub fn classification_loss_backward(logits: &[f64], gold_multihot: &[f64], upstream: f64) -> Vec<f64> {
    bce_backward(logits, gold_multihot, upstream)
}

/// Labels whose probability reaches `threshold`.
pub fn decide(logits: &[f64], threshold: f64) -> Vec<usize> {
    logits
        .iter()
        .enumerate()
        .filter(|(_, &z)| sigmoid(z) >= threshold)
        .map(|(j, _)| j)
        .collect()
}
