use std::collections::BTreeMap;

use log::info;
use serde::Serialize;

use super::{evaluate_model, MetricsReport};
use crate::corpus::Dataset;
use crate::error::Result;
use crate::matching::{Pooling, Variant};
use crate::training::{train, truncate, TrainConfig};

/// The six cells in report row order.
pub const ABLATION_GRID: [(Variant, Pooling); 6] = [
    (Variant::NoPrior, Pooling::Mean),
    (Variant::NoPrior, Pooling::Max),
    (Variant::NoNs, Pooling::Mean),
    (Variant::NoNs, Pooling::Max),
    (Variant::Full, Pooling::Mean),
    (Variant::Full, Pooling::Max),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRun {
    pub seed: u64,
    pub best_epoch: usize,
    /// Mean train `L_ns` of the last epoch.
    pub final_l_ns: f64,
    pub test: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationCell {
    pub variant: Variant,
    pub pooling: Pooling,
    pub runs: Vec<CellRun>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl AblationCell {
    pub fn mean_precision(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.test.precision))
    }

    pub fn mean_recall(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.test.recall))
    }

    pub fn mean_micro_f1(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.test.micro_f1))
    }

    pub fn mean_macro_f1(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.test.macro_f1))
    }

    /// Seed-mean micro-F1 of each attribute.
    pub fn mean_per_attribute(&self) -> BTreeMap<usize, f64> {
        let mut out = BTreeMap::new();
        if let Some(first) = self.runs.first() {
            for &a in first.test.per_attribute.keys() {
                out.insert(a, mean(self.runs.iter().map(|r| r.test.per_attribute[&a])));
            }
        }
        out
    }
}

/// Per-seed micro-F1 difference of the full variant over the no-negatives
/// variant at one pooling mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedDelta {
    pub pooling: Pooling,
    pub seed: u64,
    pub full: f64,
    pub no_ns: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub cells: Vec<AblationCell>,
}

impl AblationReport {
    pub fn cell(&self, variant: Variant, pooling: Pooling) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.pooling == pooling)
    }

    pub fn deltas(&self) -> Vec<SeedDelta> {
        let mut out = Vec::new();
        for pooling in Pooling::ALL {
            let (Some(full), Some(no_ns)) = (
                self.cell(Variant::Full, pooling),
                self.cell(Variant::NoNs, pooling),
            ) else {
                continue;
            };
            for (a, b) in full.runs.iter().zip(&no_ns.runs) {
                out.push(SeedDelta {
                    pooling,
                    seed: a.seed,
                    full: a.test.micro_f1,
                    no_ns: b.test.micro_f1,
                    delta: a.test.micro_f1 - b.test.micro_f1,
                });
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("variant,model,pooling,seeds,precision,recall,micro_f1,macro_f1\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{:.2},{:.2},{:.2},{:.2}\n",
                c.variant.name(),
                super::case_study::csv_field(c.variant.model_name()),
                c.pooling.name(),
                c.runs.len(),
                c.mean_precision(),
                c.mean_recall(),
                c.mean_micro_f1(),
                c.mean_macro_f1()
            ));
        }
        out
    }

    pub fn deltas_csv(&self) -> String {
        let mut out = String::from("pooling,seed,full_mif1,no_ns_mif1,delta\n");
        for d in self.deltas() {
            out.push_str(&format!(
                "{},{},{:.2},{:.2},{:.2}\n",
                d.pooling.name(),
                d.seed,
                d.full,
                d.no_ns,
                d.delta
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<26} {:<10} {:>7} {:>7} {:>7} {:>7}\n",
            "Models", "SM Pooling", "P", "R", "MiF1", "MaF1"
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{:<26} {:<10} {:>7.2} {:>7.2} {:>7.2} {:>7.2}\n",
                c.variant.model_name(),
                c.pooling.name(),
                c.mean_precision(),
                c.mean_recall(),
                c.mean_micro_f1(),
                c.mean_macro_f1()
            ));
        }
        let deltas = self.deltas();
        if !deltas.is_empty() {
            out.push_str("\nfull - no_ns Micro-F1 per seed\n");
            for pooling in Pooling::ALL {
                let ds: Vec<&SeedDelta> = deltas.iter().filter(|d| d.pooling == pooling).collect();
                if ds.is_empty() {
                    continue;
                }
                let parts: Vec<String> = ds
                    .iter()
                    .map(|d| format!("seed {}: {:+.2}", d.seed, d.delta))
                    .collect();
                let m = mean(ds.iter().map(|d| d.delta));
                out.push_str(&format!("{:<5} {}  (mean {:+.2})\n", pooling.name(), parts.join(", "), m));
            }
        }
        out
    }
}

/// Trains every `(variant, pooling)` cell once per seed and scores the
/// selected checkpoint on the test split. Cells share the dataset, seeds and
/// every other setting in `base`.
pub fn run_cells(
    ds: &Dataset,
    base: &TrainConfig,
    cells: &[(Variant, Pooling)],
    seeds: &[u64],
) -> Result<AblationReport> {
    let test = truncate(&ds.test, base.max_len);
    let mut out = Vec::with_capacity(cells.len());
    for &(variant, pooling) in cells {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = TrainConfig {
                variant,
                pooling,
                seed,
                ..base.clone()
            };
            let outcome = train(ds, &cfg)?;
            let model = outcome.checkpoint.model()?;
            let report = evaluate_model(&model, &ds.schema, &test, cfg.threshold)?;
            info!(
                "{} / {} seed {seed}: test MiF1 {:.2}",
                variant.model_name(),
                pooling.name(),
                report.micro_f1
            );
            runs.push(CellRun {
                seed,
                best_epoch: outcome.best_epoch,
                final_l_ns: outcome.log.last().map_or(0.0, |e| e.l_ns),
                test: report,
            });
        }
        out.push(AblationCell {
            variant,
            pooling,
            runs,
        });
    }
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        cells: out,
    })
}

/// The six-cell pooling by variant grid.
pub fn run_ablation(ds: &Dataset, base: &TrainConfig, seeds: &[u64]) -> Result<AblationReport> {
    run_cells(ds, base, &ABLATION_GRID, seeds)
}
