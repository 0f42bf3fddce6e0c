use std::collections::BTreeMap;

use serde::Serialize;

use avex_core::corpus::{generate_corpus, Attribute, AttributeSchema, GenConfig, Label, Split};
use avex_core::evaluation::{evaluate_model, MetricsReport};
use avex_core::matching::{sample_negative_labels, total_loss, LossParts, Pooling, Variant};
use avex_core::rng::{stream, tag};
use avex_core::training::{train, truncate, EpochLog, TrainConfig};
use avex_core::{Error, Result};

const VARIANTS: [Variant; 4] = [Variant::Full, Variant::NoNs, Variant::NoPrior, Variant::BceOnly];

#[derive(Debug, Serialize)]
pub struct LabelTally {
    pub label_id: usize,
    pub attr_id: usize,
    pub gold: bool,
    pub count: u32,
}

#[derive(Debug, Serialize)]
pub struct SamplerReport {
    pub draws: u32,
    pub per_attribute_counts: BTreeMap<usize, usize>,
    pub first_draw: Vec<usize>,
    pub labels: Vec<LabelTally>,
}

fn grid_schema(n_attributes: usize, values_per_attribute: usize) -> Result<AttributeSchema> {
    let attributes = (0..n_attributes)
        .map(|a| Attribute {
            attr_id: a,
            name_tokens: vec![2 + a],
        })
        .collect();
    let labels = (0..n_attributes * values_per_attribute)
        .map(|l| Label {
            label_id: l,
            attr_id: l / values_per_attribute,
            value_tokens: vec![2 + n_attributes + l],
        })
        .collect();
    AttributeSchema::new(attributes, labels)
}

/// Tallies negative draws for one product over a grid-shaped schema.
pub fn sample_negatives(
    n_attributes: usize,
    values_per_attribute: usize,
    gold: &[usize],
    draws: u32,
    seed: u64,
) -> Result<SamplerReport> {
    if n_attributes == 0 || values_per_attribute == 0 {
        return Err(Error::Config("schema needs at least one attribute and one value".into()));
    }
    let schema = grid_schema(n_attributes, values_per_attribute)?;
    let n = schema.n_labels();
    if let Some(&bad) = gold.iter().find(|&&g| g >= n) {
        return Err(Error::Config(format!("gold label {bad} out of range for {n} labels")));
    }
    let by_attr = schema.gold_by_attribute(gold);
    let mut counts = vec![0u32; n];
    let mut first = None;
    let mut per_attribute_counts = BTreeMap::new();
    for d in 0..draws {
        let r = sample_negative_labels(schema.a2l(), &by_attr, &mut stream(seed, &[tag::NEG_SAMPLE, d as u64]));
        for &l in &r.neg_label_ids {
            counts[l] += 1;
        }
        if first.is_none() {
            per_attribute_counts = r.per_attribute_counts;
            first = Some(r.neg_label_ids);
        }
    }
    let labels = counts
        .into_iter()
        .enumerate()
        .map(|(l, count)| LabelTally {
            label_id: l,
            attr_id: schema.attr_of(l),
            gold: gold.contains(&l),
            count,
        })
        .collect();
    Ok(SamplerReport {
        draws,
        per_attribute_counts,
        first_draw: first.unwrap_or_default(),
        labels,
    })
}

#[derive(Debug, Serialize)]
pub struct LossRow {
    pub variant: &'static str,
    pub model: &'static str,
    pub f_effective: f64,
    pub w_sm: f64,
    pub w_ns: f64,
    pub w_pr: f64,
    pub total: f64,
}

/// Total loss under each variant for fixed loss parts.
pub fn loss_table(l_bce: f64, l_sm: f64, l_ns: f64, l_pr: f64, f: f64) -> Result<Vec<LossRow>> {
    let parts = LossParts { l_bce, l_sm, l_ns, l_pr };
    VARIANTS
        .iter()
        .map(|&v| {
            let (w_sm, w_ns, w_pr) = v.weights(v.effective_f(f));
            Ok(LossRow {
                variant: v.name(),
                model: v.model_name(),
                f_effective: v.effective_f(f),
                w_sm,
                w_ns,
                w_pr,
                total: total_loss(parts, v, f)?,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct TrainReport {
    pub variant: &'static str,
    pub pooling: &'static str,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub test: MetricsReport,
}

pub fn demo_corpus() -> GenConfig {
    GenConfig {
        n_attributes: 6,
        values_per_attribute: 4,
        n_train: 240,
        n_val: 40,
        n_test: 40,
        noise_token_count: 8,
        noise_vocab_size: 60,
        ..GenConfig::default()
    }
}

/// Trains a small model on a fixed demo corpus and scores the test split.
pub fn train_demo(seed: u64, variant: &str, pooling: &str, epochs: usize, f: f64) -> Result<TrainReport> {
    let variant: Variant = variant.parse()?;
    let pooling: Pooling = pooling.parse()?;
    let ds = generate_corpus(&demo_corpus(), seed)?;
    let cfg = TrainConfig {
        d_h: 16,
        d_l: 16,
        batch_size: 16,
        epochs,
        learning_rate: 1e-2,
        f_weight: 1.0,
        f_final: Some(f),
        pooling,
        variant,
        seed,
        ..TrainConfig::default()
    };
    let out = train(&ds, &cfg)?;
    let model = out.checkpoint.model()?;
    let test = truncate(ds.split(Split::Test), cfg.max_len);
    let report = evaluate_model(&model, &ds.schema, &test, cfg.threshold)?;
    Ok(TrainReport {
        variant: variant.name(),
        pooling: pooling.name(),
        best_epoch: out.best_epoch,
        log: out.log,
        test: report,
    })
}
