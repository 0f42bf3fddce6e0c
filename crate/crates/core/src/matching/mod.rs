//! Semantic matching, negative label sampling, label prior matching, and the
//! composite objective.
//!
//! The composite loss is
//!
//! ```text
//! L = L_bce + (1 - F) * (L_sm + L_ns) + F * L_pr
//! ```
//!
//! where `L_sm` is minus the mean cosine between each product's pooled text
//! feature and its pooled gold-label embedding, and `L_ns` is the mean cosine
//! between the pooled text feature and the mean of sampled same-attribute
//! negative labels.

mod sampler;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::{cosine, max_pool_rows, max_pool_rows_backward, mean_pool_rows, Array2, MaxPool};
use crate::error::{Error, Result};

pub use sampler::{sample_negative_labels, NegSampleResult};

/// How gold-label rows are combined into `L_cr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Max,
    Mean,
}

impl Pooling {
    pub const ALL: [Pooling; 2] = [Pooling::Mean, Pooling::Max];

    pub fn name(self) -> &'static str {
        match self {
            Pooling::Max => "max",
            Pooling::Mean => "mean",
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pooling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Pooling::Max),
            "mean" => Ok(Pooling::Mean),
            o => Err(Error::Config(format!("unknown pooling `{o}` (expected max or mean)"))),
        }
    }
}

/// Which terms of the composite objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// AE-smnsMLC: every term.
    #[default]
    Full,
    /// AE-smMLC: no negative label sampling.
    NoNs,
    /// AE-smnsMLC without label prior matching; `F` is forced to 0.
    NoPrior,
    /// Plain classifier: only `L_bce`.
    BceOnly,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoNs => "no_ns",
            Variant::NoPrior => "no_prior",
            Variant::BceOnly => "bce_only",
        }
    }

    /// Model name as used in reports.
    pub fn model_name(self) -> &'static str {
        match self {
            Variant::Full => "AE-smnsMLC",
            Variant::NoNs => "AE-smMLC",
            Variant::NoPrior => "AE-smnsMLC w/o LabelPrior",
            Variant::BceOnly => "BCE only",
        }
    }

    pub fn uses_negatives(self) -> bool {
        matches!(self, Variant::Full | Variant::NoPrior)
    }

    /// `(w_sm, w_ns, w_pr)` multiplying the matching and prior losses.
    pub fn weights(self, f: f64) -> (f64, f64, f64) {
        match self {
            Variant::Full => (1.0 - f, 1.0 - f, f),
            Variant::NoNs => (1.0 - f, 0.0, f),
            Variant::NoPrior => (1.0, 1.0, 0.0),
            Variant::BceOnly => (0.0, 0.0, 0.0),
        }
    }

    /// The `F` actually in effect.
    pub fn effective_f(self, f: f64) -> f64 {
        match self {
            Variant::Full | Variant::NoNs => f,
            Variant::NoPrior | Variant::BceOnly => 0.0,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no_ns" => Ok(Variant::NoNs),
            "no_prior" => Ok(Variant::NoPrior),
            "bce_only" => Ok(Variant::BceOnly),
            o => Err(Error::Config(format!(
                "unknown variant `{o}` (expected full, no_ns, no_prior or bce_only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub l_bce: f64,
    pub l_sm: f64,
    pub l_ns: f64,
    pub l_pr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_bce: f64,
    pub l_sm: f64,
    pub l_ns: f64,
    pub l_pr: f64,
    pub f_weight: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn new(parts: LossParts, variant: Variant, f: f64) -> Result<Self> {
        Ok(Self {
            l_bce: parts.l_bce,
            l_sm: parts.l_sm,
            l_ns: parts.l_ns,
            l_pr: parts.l_pr,
            f_weight: variant.effective_f(f),
            total: total_loss(parts, variant, f)?,
        })
    }

    pub fn parts(&self) -> LossParts {
        LossParts {
            l_bce: self.l_bce,
            l_sm: self.l_sm,
            l_ns: self.l_ns,
            l_pr: self.l_pr,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_bce, self.l_sm, self.l_ns, self.l_pr, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub fn check_f(f: f64) -> Result<()> {
    if (0.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(Error::Config(format!("loss weight F = {f} is outside [0, 1]")))
    }
}

pub fn total_loss(parts: LossParts, variant: Variant, f: f64) -> Result<f64> {
    check_f(f)?;
    let LossParts {
        l_bce,
        l_sm,
        l_ns,
        l_pr,
    } = parts;
    Ok(match variant {
        Variant::Full => l_bce + (1.0 - f) * (l_sm + l_ns) + f * l_pr,
        Variant::NoNs => l_bce + (1.0 - f) * l_sm + f * l_pr,
        Variant::NoPrior => l_bce + l_sm + l_ns,
        Variant::BceOnly => l_bce,
    })
}

/// Stacks the gold rows of `h_l` in ascending label order.
pub fn label_selector(h_l: &Array2, gold: &[usize]) -> Result<Array2> {
    if gold.is_empty() {
        return Err(Error::EmptyGoldSet);
    }
    let mut ids = gold.to_vec();
    ids.sort_unstable();
    if let Some(&bad) = ids.iter().find(|&&g| g >= h_l.rows()) {
        return Err(Error::Shape(format!(
            "label {bad} out of range for {} labels",
            h_l.rows()
        )));
    }
    Ok(h_l.select_rows(&ids))
}

/// Pooled gold-label representation plus what its backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub enum Combined {
    Max(MaxPool),
    Mean(Vec<f64>),
}

impl Combined {
    pub fn values(&self) -> &[f64] {
        match self {
            Combined::Max(p) => &p.values,
            Combined::Mean(v) => v,
        }
    }
}

pub fn combine_gold_labels(l_gt: &Array2, mode: Pooling) -> Result<Combined> {
    match mode {
        Pooling::Max => Ok(Combined::Max(max_pool_rows(l_gt)?)),
        Pooling::Mean => Ok(Combined::Mean(mean_pool_rows(l_gt, &vec![true; l_gt.rows()])?)),
    }
}

/// Gradient w.r.t. the stacked gold rows given the gradient of `L_cr`.
pub fn combine_gold_labels_backward(combined: &Combined, rows: usize, grad: &[f64]) -> Array2 {
    let mut d = Array2::zeros(rows, grad.len());
    match combined {
        Combined::Max(p) => max_pool_rows_backward(&mut d, p, grad),
        Combined::Mean(_) => {
            let inv = 1.0 / rows as f64;
            for r in 0..rows {
                d.row_mut(r)
                    .iter_mut()
                    .zip(grad)
                    .for_each(|(x, g)| *x += g * inv);
            }
        }
    }
    d
}

/// `L_sm`: minus the mean cosine over `(T_p, L_cr)` pairs.
pub fn semantic_match_loss<T: AsRef<[f64]>, L: AsRef<[f64]>>(batch: &[(T, L)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("semantic matching over an empty batch".into()));
    }
    let s: f64 = batch
        .iter()
        .map(|(t, l)| cosine(t.as_ref(), l.as_ref()))
        .sum();
    Ok(-s / batch.len() as f64)
}

/// `L_ns`: mean cosine between `T_p` and the mean of each product's negative
/// rows. Products without negatives add 0 but still count in the mean.
pub fn negative_sample_loss<T: AsRef<[f64]>>(batch: &[(T, Option<Array2>)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("negative sampling loss over an empty batch".into()));
    }
    let mut s = 0.0;
    for (t, neg) in batch {
        if let Some(neg) = neg.as_ref().filter(|n| n.rows() > 0) {
            let pooled = mean_pool_rows(neg, &vec![true; neg.rows()])?;
            s += cosine(t.as_ref(), &pooled);
        }
    }
    Ok(s / batch.len() as f64)
}

/// `L_pr`: moment matching of the label embeddings to a unit normal,
/// `(1/d) * sum_k (mu_k^2 + (var_k - 1)^2)` with column statistics over labels.
pub fn label_prior_loss(h_l: &Array2) -> f64 {
    let (mu, var) = column_moments(h_l);
    let d = h_l.cols() as f64;
    mu.iter()
        .zip(&var)
        .map(|(m, v)| m * m + (v - 1.0) * (v - 1.0))
        .sum::<f64>()
        / d
}

pub fn label_prior_loss_backward(h_l: &Array2, upstream: f64) -> Array2 {
    let (n, d) = h_l.shape();
    let (mu, var) = column_moments(h_l);
    let nf = n as f64;
    let scale = upstream / d as f64;
    Array2::from_fn(n, d, |j, k| {
        scale * (2.0 * mu[k] / nf + 4.0 * (var[k] - 1.0) * (h_l.get(j, k) - mu[k]) / nf)
    })
}

fn column_moments(h: &Array2) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = h.shape();
    let nf = n as f64;
    let mut mu = vec![0.0; d];
    for r in 0..n {
        mu.iter_mut().zip(h.row(r)).for_each(|(m, x)| *m += x);
    }
    mu.iter_mut().for_each(|m| *m /= nf);
    let mut var = vec![0.0; d];
    for r in 0..n {
        for (k, x) in h.row(r).iter().enumerate() {
            var[k] += (x - mu[k]) * (x - mu[k]);
        }
    }
    var.iter_mut().for_each(|v| *v /= nf);
    (mu, var)
}
