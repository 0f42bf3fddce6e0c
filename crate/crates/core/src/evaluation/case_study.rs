use serde::Serialize;

use super::{evaluate, MetricsReport};
use crate::corpus::{Dataset, Split};
use crate::error::{Error, Result};
use crate::training::checkpoint::Checkpoint;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseStudyRow {
    pub label_id: usize,
    pub label_text: String,
    pub f1_a: f64,
    pub f1_b: f64,
}

/// Per-label F1 of two models on the labels of one attribute.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseStudy {
    pub attr_id: usize,
    pub attr_name: String,
    pub rows: Vec<CaseStudyRow>,
    pub attr_f1_a: f64,
    pub attr_f1_b: f64,
}

impl CaseStudy {
    pub fn from_reports(
        ds: &Dataset,
        attr_id: usize,
        a: &MetricsReport,
        b: &MetricsReport,
    ) -> Result<Self> {
        let attr = ds
            .schema
            .attribute(attr_id)
            .ok_or(Error::UnknownAttribute(attr_id))?;
        let rows = ds.schema.a2l()[&attr_id]
            .iter()
            .map(|&l| CaseStudyRow {
                label_id: l,
                label_text: ds.vocab.render(&ds.schema.labels()[l].value_tokens),
                f1_a: a.per_label[&l].f1,
                f1_b: b.per_label[&l].f1,
            })
            .collect();
        Ok(Self {
            attr_id,
            attr_name: ds.vocab.render(&attr.name_tokens),
            rows,
            attr_f1_a: a.per_attribute[&attr_id],
            attr_f1_b: b.per_attribute[&attr_id],
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label_id,label_text,f1_a,f1_b\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.2},{:.2}\n",
                r.label_id,
                csv_field(&r.label_text),
                r.f1_a,
                r.f1_b
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label_text.len())
            .max()
            .unwrap_or(0)
            .max(10);
        let mut out = format!(
            "attribute {} ({})\n{:>5}  {:<width$}  {:>7}  {:>7}\n",
            self.attr_id, self.attr_name, "id", "label", "F1 A", "F1 B"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:>5}  {:<width$}  {:>7.2}  {:>7.2}\n",
                r.label_id, r.label_text, r.f1_a, r.f1_b
            ));
        }
        out.push_str(&format!(
            "{:>5}  {:<width$}  {:>7.2}  {:>7.2}\n",
            "", "micro-F1", self.attr_f1_a, self.attr_f1_b
        ));
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Compares two checkpoints label by label on attribute `attr_id`.
pub fn case_study(
    a: &Checkpoint,
    b: &Checkpoint,
    ds: &Dataset,
    split: Split,
    attr_id: usize,
    threshold: f64,
) -> Result<CaseStudy> {
    if ds.schema.attribute(attr_id).is_none() {
        return Err(Error::UnknownAttribute(attr_id));
    }
    let ra = evaluate(a, ds, split, threshold)?;
    let rb = evaluate(b, ds, split, threshold)?;
    CaseStudy::from_reports(ds, attr_id, &ra, &rb)
}
