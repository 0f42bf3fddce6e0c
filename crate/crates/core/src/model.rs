//! The full network and its batch objective.
//!
//! One batch pass encodes all labels once, runs every product through the
//! text encoder and predictor, adds the matching terms, and accumulates
//! gradients into the parameter store. Per-product work is independent and
//! may run in parallel; its gradients are always summed in product order so
//! results do not depend on the thread count.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{AttributeSchema, Product, PAD};
use crate::diffcore::{
    axpy, cosine, cosine_backward, mean_pool_rows, mean_pool_rows_backward, Array2, ParamId,
    ParamStore,
};
use crate::encoders::{
    encode_labels, encode_labels_backward, encode_text, encode_text_backward, LabelEncoderParams,
    LabelFeatures, TextEncoderParams,
};
use crate::error::{Error, Result};
use crate::matching::{
    combine_gold_labels, combine_gold_labels_backward, label_prior_loss, label_prior_loss_backward,
    label_selector, sample_negative_labels, LossBundle, LossParts, Pooling, Variant,
};
use crate::predictor::{classification_loss, classification_loss_backward, predict_logits, predict_logits_backward};
use crate::rng::{self, tag};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub vocab_size: usize,
    pub n_labels: usize,
    pub dim: usize,
    pub kernel: usize,
    pub conv_relu: bool,
    pub share_embeddings: bool,
    /// Adds a trainable per-label row to the label encoder input, seeded from
    /// an external `N x d` table.
    pub label_table: bool,
}

pub mod names {
    pub const TEXT_EMBEDDING: &str = "text.embedding";
    pub const CONV_FILTERS: &str = "text.conv.filters";
    pub const CONV_BIAS: &str = "text.conv.bias";
    pub const LABEL_EMBEDDING: &str = "label.embedding";
    pub const LABEL_TABLE: &str = "label.table";
    pub const LABEL_PROJ_W: &str = "label.proj.weight";
    pub const LABEL_PROJ_B: &str = "label.proj.bias";
    pub const PRED_W: &str = "predictor.weight";
    pub const PRED_B: &str = "predictor.bias";
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ids {
    text_emb: ParamId,
    conv_w: ParamId,
    conv_b: ParamId,
    label_emb: ParamId,
    label_table: Option<ParamId>,
    proj_w: ParamId,
    proj_b: ParamId,
    pred_w: ParamId,
    pred_b: ParamId,
}

/// Initial scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub text_embedding_std: f64,
    pub label_embedding_std: f64,
    /// Initial predictor bias, usually the logit of the mean label rate.
    pub output_bias: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            text_embedding_std: 0.1,
            label_embedding_std: 0.02,
            output_bias: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub store: ParamStore,
    ids: Ids,
}

/// Which losses are active and how they are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub variant: Variant,
    pub pooling: Pooling,
    pub f: f64,
}

/// Identifies the negative-sampling stream of a pass: the draw for product
/// `p` comes from `(seed, epoch, p.product_id)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerKey {
    pub seed: u64,
    pub epoch: u64,
}

fn normal(rows: usize, cols: usize, std: f64, rng: &mut rng::StreamRng) -> Array2 {
    let n = Normal::new(0.0, std).expect("finite std");
    Array2::from_fn(rows, cols, |_, _| n.sample(rng))
}

impl Model {
    pub fn init(spec: ModelSpec, init: InitSpec, seed: u64) -> Result<Self> {
        if spec.dim == 0 || spec.kernel == 0 || spec.n_labels == 0 || spec.vocab_size <= PAD {
            return Err(Error::Config(format!("degenerate model spec {spec:?}")));
        }
        let d = spec.dim;
        let r = |i: u64| rng::stream(seed, &[tag::INIT, i]);
        let mut store = ParamStore::new();
        let mut text_emb = normal(spec.vocab_size, d, init.text_embedding_std, &mut r(0));
        text_emb.row_mut(PAD).fill(0.0);
        store.add(names::TEXT_EMBEDDING, text_emb)?;
        let fan_in = (spec.kernel * d) as f64;
        store.add(names::CONV_FILTERS, normal(d, spec.kernel * d, 1.0 / fan_in.sqrt(), &mut r(1)))?;
        store.add(names::CONV_BIAS, Array2::zeros(1, d))?;
        if !spec.share_embeddings {
            let mut label_emb = normal(spec.vocab_size, d, init.label_embedding_std, &mut r(2));
            label_emb.row_mut(PAD).fill(0.0);
            store.add(names::LABEL_EMBEDDING, label_emb)?;
        }
        if spec.label_table {
            store.add(names::LABEL_TABLE, normal(spec.n_labels, d, init.label_embedding_std, &mut r(3)))?;
        }
        store.add(names::LABEL_PROJ_W, normal(d, d, 1.0 / (d as f64).sqrt(), &mut r(4)))?;
        store.add(names::LABEL_PROJ_B, Array2::zeros(1, d))?;
        store.add(names::PRED_W, normal(spec.n_labels, d, 1.0 / (d as f64).sqrt(), &mut r(5)))?;
        let mut bias = Array2::zeros(1, spec.n_labels);
        bias.fill(init.output_bias);
        store.add(names::PRED_B, bias)?;
        Self::from_store(spec, store)
    }

    /// Wraps an existing store, checking names and shapes against `spec`.
    pub fn from_store(spec: ModelSpec, store: ParamStore) -> Result<Self> {
        let (v, n, d, k) = (spec.vocab_size, spec.n_labels, spec.dim, spec.kernel);
        let get = |name: &str, shape: (usize, usize)| -> Result<ParamId> {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
            if store.value(id).shape() != shape {
                return Err(Error::Shape(format!(
                    "parameter `{name}` is {:?}, expected {shape:?}",
                    store.value(id).shape()
                )));
            }
            Ok(id)
        };
        let text_emb = get(names::TEXT_EMBEDDING, (v, d))?;
        let label_emb = if spec.share_embeddings {
            text_emb
        } else {
            get(names::LABEL_EMBEDDING, (v, d))?
        };
        let label_table = if spec.label_table {
            Some(get(names::LABEL_TABLE, (n, d))?)
        } else {
            None
        };
        let ids = Ids {
            text_emb,
            conv_w: get(names::CONV_FILTERS, (d, k * d))?,
            conv_b: get(names::CONV_BIAS, (1, d))?,
            label_emb,
            label_table,
            proj_w: get(names::LABEL_PROJ_W, (d, d))?,
            proj_b: get(names::LABEL_PROJ_B, (1, d))?,
            pred_w: get(names::PRED_W, (n, d))?,
            pred_b: get(names::PRED_B, (1, n))?,
        };
        Ok(Self { spec, store, ids })
    }

    /// Replaces the per-label table with externally supplied rows.
    pub fn set_label_table(&mut self, rows: &Array2) -> Result<()> {
        let id = self
            .ids
            .label_table
            .ok_or_else(|| Error::Config("model was built without a label table".into()))?;
        if rows.shape() != self.store.value(id).shape() {
            return Err(Error::Shape(format!(
                "label table is {:?}, model expects {:?}",
                rows.shape(),
                self.store.value(id).shape()
            )));
        }
        *self.store.value_mut(id) = rows.clone();
        Ok(())
    }

    pub fn text_params(&self) -> TextEncoderParams<'_> {
        TextEncoderParams {
            embedding: self.store.value(self.ids.text_emb),
            filters: self.store.value(self.ids.conv_w),
            bias: self.store.value(self.ids.conv_b).row(0),
            kernel: self.spec.kernel,
            relu: self.spec.conv_relu,
        }
    }

    pub fn label_params(&self) -> LabelEncoderParams<'_> {
        LabelEncoderParams {
            embedding: self.store.value(self.ids.label_emb),
            label_table: self.ids.label_table.map(|id| self.store.value(id)),
            proj_w: self.store.value(self.ids.proj_w),
            proj_b: self.store.value(self.ids.proj_b).row(0),
        }
    }

    pub fn encode_labels(&self, schema: &AttributeSchema) -> Result<LabelFeatures> {
        encode_labels(schema, self.label_params())
    }

    fn pred_w(&self) -> &Array2 {
        self.store.value(self.ids.pred_w)
    }

    fn pred_b(&self) -> &[f64] {
        self.store.value(self.ids.pred_b).row(0)
    }

    /// Logits for one token sequence given precomputed `H_L`.
    pub fn logits(&self, h_l: &Array2, tokens: &[usize]) -> Result<Vec<f64>> {
        let feats = encode_text(tokens, self.text_params())?;
        Ok(predict_logits(&feats.features, &feats.valid, h_l, self.pred_w(), self.pred_b())?.logits)
    }

    /// Logits for every product, in order.
    pub fn predict(&self, schema: &AttributeSchema, products: &[Product]) -> Result<Vec<Vec<f64>>> {
        let lf = self.encode_labels(schema)?;
        map_products(products, |p| self.logits(&lf.h_l, &p.tokens))
    }

    /// Forward and backward over one batch. Gradients of the batch objective
    /// are *added* to the store's accumulators; call `zero_grads` first.
    pub fn accumulate_gradients(
        &mut self,
        schema: &AttributeSchema,
        batch: &[&Product],
        objective: Objective,
        key: SamplerKey,
    ) -> Result<LossBundle> {
        crate::matching::check_f(objective.f)?;
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let lf = self.encode_labels(schema)?;
        let passes = map_products(batch, |p| self.product_pass(schema, &lf.h_l, p, objective, key, batch.len()))?;

        let b = batch.len() as f64;
        let (_, _, w_pr) = objective.variant.weights(objective.f);
        let mut d_h = Array2::zeros(lf.h_l.rows(), lf.h_l.cols());
        let mut sum_bce = 0.0;
        let mut sum_sim = 0.0;
        let mut sum_neg = 0.0;
        for (p, pass) in batch.iter().zip(&passes) {
            sum_bce += pass.bce;
            sum_sim += pass.sim;
            sum_neg += pass.sim_neg;
            self.add_product_grads(&p.tokens, pass);
            d_h.add_scaled(&pass.d_h_l, 1.0);
        }
        let l_pr = label_prior_loss(&lf.h_l);
        if w_pr != 0.0 {
            d_h.add_scaled(&label_prior_loss_backward(&lf.h_l, w_pr), 1.0);
        }
        self.label_backward(&lf, &d_h);

        let parts = LossParts {
            l_bce: sum_bce / b,
            l_sm: -sum_sim / b,
            l_ns: if objective.variant.uses_negatives() { sum_neg / b } else { 0.0 },
            l_pr,
        };
        LossBundle::new(parts, objective.variant, objective.f)
    }

    /// Loss only, without touching gradients.
    pub fn batch_loss(
        &self,
        schema: &AttributeSchema,
        batch: &[&Product],
        objective: Objective,
        key: SamplerKey,
    ) -> Result<LossBundle> {
        let mut scratch = self.clone();
        scratch.store.zero_grads();
        scratch.accumulate_gradients(schema, batch, objective, key)
    }

    fn product_pass(
        &self,
        schema: &AttributeSchema,
        h_l: &Array2,
        p: &Product,
        objective: Objective,
        key: SamplerKey,
        batch_len: usize,
    ) -> Result<ProductPass> {
        let b = batch_len as f64;
        let (w_sm, w_ns, _) = objective.variant.weights(objective.f);
        let tp_params = self.text_params();
        let feats = encode_text(&p.tokens, tp_params)?;
        let t = &feats.features;
        let att = predict_logits(t, &feats.valid, h_l, self.pred_w(), self.pred_b())?;
        let y = p.gold_multihot(schema.n_labels());
        let bce = classification_loss(&att.logits, &y);
        let d_logits = classification_loss_backward(&att.logits, &y, 1.0 / b);
        let pg = predict_logits_backward(t, &feats.valid, h_l, self.pred_w(), &att, &d_logits);
        let mut d_t = pg.t_final;
        let mut d_h_l = pg.h_l;

        let t_p = mean_pool_rows(t, &feats.valid)?;
        let mut d_tp = vec![0.0; t_p.len()];

        let gold = &p.gold_labels;
        let l_gt = label_selector(h_l, gold)?;
        let combined = combine_gold_labels(&l_gt, objective.pooling)?;
        let sim = cosine(&t_p, combined.values());
        if w_sm != 0.0 {
            let (dt, dc) = cosine_backward(&t_p, combined.values(), -w_sm / b);
            axpy(&mut d_tp, &dt, 1.0);
            let d_gt = combine_gold_labels_backward(&combined, l_gt.rows(), &dc);
            for (i, &g) in gold.iter().enumerate() {
                axpy(d_h_l.row_mut(g), d_gt.row(i), 1.0);
            }
        }

        let mut sim_neg = 0.0;
        if objective.variant.uses_negatives() {
            let mut rng = rng::stream(key.seed, &[tag::NEG_SAMPLE, key.epoch, p.product_id]);
            let neg = sample_negative_labels(schema.a2l(), &schema.gold_by_attribute(gold), &mut rng);
            let n_neg = neg.neg_label_ids.len();
            if n_neg > 0 {
                let l_neg = h_l.select_rows(&neg.neg_label_ids);
                let pooled = mean_pool_rows(&l_neg, &vec![true; n_neg])?;
                sim_neg = cosine(&t_p, &pooled);
                if w_ns != 0.0 {
                    let (dt, dn) = cosine_backward(&t_p, &pooled, w_ns / b);
                    axpy(&mut d_tp, &dt, 1.0);
                    for &l in &neg.neg_label_ids {
                        axpy(d_h_l.row_mut(l), &dn, 1.0 / n_neg as f64);
                    }
                }
            }
        }

        mean_pool_rows_backward(&mut d_t, &feats.valid, &d_tp);
        let text = encode_text_backward(&feats, tp_params, &d_t);
        Ok(ProductPass {
            bce,
            sim,
            sim_neg,
            d_embedded: text.embedded,
            d_conv_w: text.filters,
            d_conv_b: text.bias,
            d_pred_w: pg.weight,
            d_pred_b: pg.bias,
            d_h_l,
        })
    }

    fn add_product_grads(&mut self, tokens: &[usize], pass: &ProductPass) {
        let ids = self.ids;
        let emb = self.store.grad_mut(ids.text_emb);
        crate::diffcore::embed_lookup_backward(emb, tokens, &pass.d_embedded);
        emb.row_mut(PAD).fill(0.0);
        self.store.grad_mut(ids.conv_w).add_scaled(&pass.d_conv_w, 1.0);
        axpy(self.store.grad_mut(ids.conv_b).row_mut(0), &pass.d_conv_b, 1.0);
        self.store.grad_mut(ids.pred_w).add_scaled(&pass.d_pred_w, 1.0);
        axpy(self.store.grad_mut(ids.pred_b).row_mut(0), &pass.d_pred_b, 1.0);
    }

    fn label_backward(&mut self, lf: &LabelFeatures, d_h: &Array2) {
        let ids = self.ids;
        let mut g_emb = Array2::zeros(self.spec.vocab_size, self.spec.dim);
        let mut g_table = ids.label_table.map(|_| Array2::zeros(self.spec.n_labels, self.spec.dim));
        let mut g_w = Array2::zeros(self.spec.dim, self.spec.dim);
        let mut g_b = vec![0.0; self.spec.dim];
        encode_labels_backward(
            lf,
            self.label_params(),
            d_h,
            &mut g_emb,
            g_table.as_mut(),
            &mut g_w,
            &mut g_b,
        );
        self.store.grad_mut(ids.label_emb).add_scaled(&g_emb, 1.0);
        if let (Some(id), Some(g)) = (ids.label_table, g_table) {
            self.store.grad_mut(id).add_scaled(&g, 1.0);
        }
        self.store.grad_mut(ids.proj_w).add_scaled(&g_w, 1.0);
        axpy(self.store.grad_mut(ids.proj_b).row_mut(0), &g_b, 1.0);
    }

    /// Rows of embedding tables that never receive gradient (PAD).
    pub fn frozen_rows(&self) -> Vec<(ParamId, usize)> {
        let mut v = vec![(self.ids.text_emb, PAD)];
        if self.ids.label_emb != self.ids.text_emb {
            v.push((self.ids.label_emb, PAD));
        }
        v
    }
}

struct ProductPass {
    bce: f64,
    sim: f64,
    sim_neg: f64,
    d_embedded: Array2,
    d_conv_w: Array2,
    d_conv_b: Vec<f64>,
    d_pred_w: Array2,
    d_pred_b: Vec<f64>,
    d_h_l: Array2,
}

#[cfg(feature = "parallel")]
fn map_products<P: Sync, T: Send>(items: &[P], f: impl Fn(&P) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_products<P, T>(items: &[P], f: impl Fn(&P) -> Result<T>) -> Result<Vec<T>> {
    items.iter().map(f).collect()
}
