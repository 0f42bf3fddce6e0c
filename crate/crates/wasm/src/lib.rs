//! Browser bindings for the avex demo page.
//!
//! Every export returns a JSON string. The `demo` module holds the plain
//! Rust versions so they can be tested natively.

use wasm_bindgen::prelude::*;

pub mod demo;

fn js_err(e: avex_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Draws negatives `draws` times for one product and tallies how often each
/// label was picked.
#[wasm_bindgen(js_name = sampleNegatives)]
pub fn sample_negatives(
    n_attributes: usize,
    values_per_attribute: usize,
    gold: Vec<u32>,
    draws: u32,
    seed: u64,
) -> Result<String, JsError> {
    let gold: Vec<usize> = gold.into_iter().map(|g| g as usize).collect();
    demo::sample_negatives(n_attributes, values_per_attribute, &gold, draws, seed)
        .map(|r| to_json(&r))
        .map_err(js_err)
}

/// Composite loss of every variant for the given loss parts and `F`.
#[wasm_bindgen(js_name = lossTable)]
pub fn loss_table(l_bce: f64, l_sm: f64, l_ns: f64, l_pr: f64, f: f64) -> Result<String, JsError> {
    demo::loss_table(l_bce, l_sm, l_ns, l_pr, f)
        .map(|r| to_json(&r))
        .map_err(js_err)
}

/// Trains on a small generated corpus and returns per-epoch curves plus
/// test metrics.
#[wasm_bindgen(js_name = trainDemo)]
pub fn train_demo(seed: u64, variant: &str, pooling: &str, epochs: usize, f: f64) -> Result<String, JsError> {
    demo::train_demo(seed, variant, pooling, epochs, f)
        .map(|r| to_json(&r))
        .map_err(js_err)
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("demo results serialize")
}
