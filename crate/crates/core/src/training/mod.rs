//! The optimisation loop.

pub mod checkpoint;
pub mod config;
pub mod optim;

use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::Serialize;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{OptimizerConfig, TrainConfig};
pub use optim::Optimizer;

use crate::corpus::{Dataset, Product};
use crate::encoders::read_label_table;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_model, MetricsReport};
use crate::matching::LossParts;
use crate::model::{InitSpec, Model, ModelSpec, Objective, SamplerKey};
use crate::rng::{self, tag};

/// Train-set loss parts averaged over an epoch, plus validation scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub f_weight: f64,
    pub l_bce: f64,
    pub l_sm: f64,
    pub l_ns: f64,
    pub l_pr: f64,
    pub total: f64,
    pub val: Option<MetricsReport>,
}

impl EpochLog {
    pub fn csv_header() -> &'static str {
        "epoch,l_bce,l_sm,l_ns,l_pr,total,val_p,val_r,val_mif1,val_maf1"
    }

    pub fn csv_row(&self) -> String {
        let mut s = format!(
            "{},{},{},{},{},{}",
            self.epoch, self.l_bce, self.l_sm, self.l_ns, self.l_pr, self.total
        );
        match &self.val {
            Some(m) => write!(
                s,
                ",{:.2},{:.2},{:.2},{:.2}",
                m.precision, m.recall, m.micro_f1, m.macro_f1
            )
            .expect("write to string"),
            None => s.push_str(",,,,"),
        }
        s
    }
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from(EpochLog::csv_header());
    out.push('\n');
    for e in log {
        out.push_str(&e.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation Micro-F1 (the last
    /// epoch when there is no validation split).
    pub checkpoint: Checkpoint,
    /// Parameters after the last epoch that ran.
    pub final_model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Copies of `products` with token sequences cut to `max_len`.
pub fn truncate(products: &[Product], max_len: usize) -> Vec<Product> {
    products
        .iter()
        .map(|p| Product {
            tokens: p.tokens[..p.tokens.len().min(max_len)].to_vec(),
            ..p.clone()
        })
        .collect()
}

pub fn model_spec(ds: &Dataset, cfg: &TrainConfig) -> ModelSpec {
    ModelSpec {
        vocab_size: ds.vocab.len(),
        n_labels: ds.n_labels(),
        dim: cfg.d_h,
        kernel: cfg.kernel,
        conv_relu: cfg.conv_relu,
        share_embeddings: cfg.share_embeddings,
        label_table: cfg.label_init.is_some(),
    }
}

/// Freshly initialised model for `(ds, cfg)`. The output bias starts at the
/// logit of the mean training label rate.
pub fn init_model(ds: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    let n = ds.n_labels() as f64;
    let gold: usize = ds.train.iter().map(|p| p.gold_labels.len()).sum();
    let rate = (gold as f64 / (ds.train.len().max(1) as f64 * n)).clamp(1e-4, 1.0 - 1e-4);
    let init = InitSpec {
        text_embedding_std: cfg.text_embedding_std,
        label_embedding_std: cfg.label_embedding_std,
        output_bias: (rate / (1.0 - rate)).ln(),
    };
    let mut model = Model::init(model_spec(ds, cfg), init, cfg.seed)?;
    if let Some(path) = &cfg.label_init {
        model.set_label_table(&read_label_table(path)?)?;
    }
    Ok(model)
}

pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    ds.validate_for_kernel(cfg.kernel)?;
    let train_set = truncate(&ds.train, cfg.max_len);
    let val_set = truncate(&ds.val, cfg.max_len);
    let fingerprint = ds.fingerprint();

    let mut model = init_model(ds, cfg)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &model.store);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let f = cfg.f_at(epoch);
        let objective = Objective {
            variant: cfg.variant,
            pooling: cfg.pooling,
            f,
        };
        let key = SamplerKey {
            seed: cfg.seed,
            epoch: epoch as u64,
        };
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, &[tag::SHUFFLE, epoch as u64]));

        let mut sums = LossParts::default();
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Product> = chunk.iter().map(|&i| &train_set[i]).collect();
            model.store.zero_grads();
            let loss = model.accumulate_gradients(&ds.schema, &batch, objective, key)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: bi });
            }
            let w = batch.len() as f64;
            sums.l_bce += w * loss.l_bce;
            sums.l_sm += w * loss.l_sm;
            sums.l_ns += w * loss.l_ns;
            sums.l_pr += w * loss.l_pr;
            total += w * loss.total;
            opt.step(&mut model.store);
            debug!("epoch {epoch} batch {bi} total {:.6}", loss.total);
        }
        let m = train_set.len() as f64;
        let val = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_model(&model, &ds.schema, &val_set, cfg.threshold)?)
        };
        let entry = EpochLog {
            epoch,
            f_weight: f,
            l_bce: sums.l_bce / m,
            l_sm: sums.l_sm / m,
            l_ns: sums.l_ns / m,
            l_pr: sums.l_pr / m,
            total: total / m,
            val,
        };
        info!("{}", entry.csv_row());
        let score = entry.val.as_ref().map_or(f64::NEG_INFINITY, |v| v.micro_f1);
        log.push(entry);

        let improved = match &best {
            None => true,
            Some((s, _, _)) => score > *s || val_set.is_empty(),
        };
        if improved {
            best = Some((score, epoch, Checkpoint::from_model(&model, cfg, &fingerprint)));
        } else if let (Some(p), Some((_, be, _))) = (cfg.patience, &best) {
            if epoch - be >= p {
                info!("early stop at epoch {epoch}; best epoch {be}");
                break;
            }
        }
    }
    let (_, best_epoch, checkpoint) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint,
        final_model: model,
        log,
        best_epoch,
    })
}
