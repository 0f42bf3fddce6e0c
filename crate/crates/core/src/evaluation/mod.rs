//! Metrics, the ablation grid and per-attribute case studies.

mod ablation;
mod case_study;
mod metrics;

pub use ablation::{run_ablation, run_cells, AblationCell, AblationReport, CellRun, SeedDelta, ABLATION_GRID};
pub use case_study::{case_study, CaseStudy, CaseStudyRow};
pub use metrics::{f1, Counts, LabelScore, MetricsReport};

use crate::corpus::{AttributeSchema, Dataset, Product, Split};
use crate::error::Result;
use crate::model::Model;
use crate::predictor::decide;
use crate::training::checkpoint::Checkpoint;

/// Predicted label sets for `products` at `threshold`.
pub fn predict_sets(
    model: &Model,
    schema: &AttributeSchema,
    products: &[Product],
    threshold: f64,
) -> Result<Vec<Vec<usize>>> {
    Ok(model
        .predict(schema, products)?
        .iter()
        .map(|z| decide(z, threshold))
        .collect())
}

pub fn evaluate_model(
    model: &Model,
    schema: &AttributeSchema,
    products: &[Product],
    threshold: f64,
) -> Result<MetricsReport> {
    let pred = predict_sets(model, schema, products, threshold)?;
    let gold: Vec<&[usize]> = products.iter().map(|p| p.gold_labels.as_slice()).collect();
    MetricsReport::from_sets(schema, &gold, &pred)
}

/// Scores a checkpoint on one split of a dataset with the same schema.
pub fn evaluate(ckpt: &Checkpoint, ds: &Dataset, split: Split, threshold: f64) -> Result<MetricsReport> {
    ckpt.check_fingerprint(ds)?;
    let model = ckpt.model()?;
    let products = crate::training::truncate(ds.split(split), ckpt.config.max_len);
    evaluate_model(&model, &ds.schema, &products, threshold)
}

/// Metrics at each threshold, computed from a single forward pass.
pub fn threshold_sweep(
    model: &Model,
    schema: &AttributeSchema,
    products: &[Product],
    thresholds: &[f64],
) -> Result<Vec<(f64, MetricsReport)>> {
    let logits = model.predict(schema, products)?;
    let gold: Vec<&[usize]> = products.iter().map(|p| p.gold_labels.as_slice()).collect();
    thresholds
        .iter()
        .map(|&t| {
            let pred: Vec<Vec<usize>> = logits.iter().map(|z| decide(z, t)).collect();
            Ok((t, MetricsReport::from_sets(schema, &gold, &pred)?))
        })
        .collect()
}
