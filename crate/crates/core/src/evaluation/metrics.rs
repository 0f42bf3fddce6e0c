use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::corpus::AttributeSchema;
use crate::error::{Error, Result};

/// Raw decision counts for one label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// F1 in percent; 0 when there is nothing to score.
    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Harmonic mean of two percentages, 0 when both are 0.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabelScore {
    pub counts: Counts,
    pub f1: f64,
}

/// Precision, recall and F1 scores in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub totals: Counts,
    pub per_label: BTreeMap<usize, LabelScore>,
    pub per_attribute: BTreeMap<usize, f64>,
}

impl MetricsReport {
    /// Scores predicted label sets against gold sets. Macro-F1 averages over
    /// every schema label, counting labels with no support and no
    /// predictions as 0.
    pub fn from_sets<G, P>(schema: &AttributeSchema, gold: &[G], pred: &[P]) -> Result<Self>
    where
        G: AsRef<[usize]>,
        P: AsRef<[usize]>,
    {
        let n = schema.n_labels();
        if gold.len() != pred.len() {
            return Err(Error::Shape(format!(
                "{} gold sets but {} predictions",
                gold.len(),
                pred.len()
            )));
        }
        let mut counts = vec![Counts::default(); n];
        for (g, p) in gold.iter().zip(pred) {
            let (g, p) = (g.as_ref(), p.as_ref());
            for &l in g.iter().chain(p) {
                if l >= n {
                    return Err(Error::Shape(format!("label {l} out of range for {n} labels")));
                }
            }
            for &l in p {
                if g.contains(&l) {
                    counts[l].tp += 1;
                } else {
                    counts[l].fp += 1;
                }
            }
            for &l in g {
                if !p.contains(&l) {
                    counts[l].fn_ += 1;
                }
            }
        }
        Ok(Self::from_counts(schema, &counts))
    }

    pub fn from_counts(schema: &AttributeSchema, counts: &[Counts]) -> Self {
        let mut totals = Counts::default();
        let mut per_label = BTreeMap::new();
        for (l, c) in counts.iter().enumerate() {
            totals.add(*c);
            per_label.insert(l, LabelScore { counts: *c, f1: c.f1() });
        }
        let macro_f1 = if counts.is_empty() {
            0.0
        } else {
            per_label.values().map(|s| s.f1).sum::<f64>() / counts.len() as f64
        };
        let per_attribute = schema
            .a2l()
            .iter()
            .map(|(&a, labels)| {
                let mut c = Counts::default();
                for &l in labels {
                    c.add(counts[l]);
                }
                (a, c.f1())
            })
            .collect();
        let precision = totals.precision();
        let recall = totals.recall();
        Self {
            precision,
            recall,
            micro_f1: f1(precision, recall),
            macro_f1,
            totals,
            per_label,
            per_attribute,
        }
    }

    pub fn csv_header() -> &'static str {
        "precision,recall,micro_f1,macro_f1,tp,fp,fn"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{:.2},{:.2},{:.2},{:.2},{},{},{}",
            self.precision,
            self.recall,
            self.micro_f1,
            self.macro_f1,
            self.totals.tp,
            self.totals.fp,
            self.totals.fn_
        )
    }

    /// Per-label CSV: label_id, attr_id, tp, fp, fn, f1.
    pub fn per_label_csv(&self, schema: &AttributeSchema) -> String {
        let mut out = String::from("label_id,attr_id,tp,fp,fn,f1\n");
        for (l, s) in &self.per_label {
            out.push_str(&format!(
                "{l},{},{},{},{},{:.2}\n",
                schema.attr_of(*l),
                s.counts.tp,
                s.counts.fp,
                s.counts.fn_,
                s.f1
            ));
        }
        out
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8} {:>8} {:>8} {:>8}", "P", "R", "MiF1", "MaF1")?;
        write!(
            f,
            "{:>8.2} {:>8.2} {:>8.2} {:>8.2}",
            self.precision, self.recall, self.micro_f1, self.macro_f1
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Attribute, Label};

    pub(crate) fn schema(n_attrs: usize, per_attr: usize) -> AttributeSchema {
        let attributes = (0..n_attrs)
            .map(|a| Attribute {
                attr_id: a,
                name_tokens: vec![2 + a],
            })
            .collect();
        let labels = (0..n_attrs * per_attr)
            .map(|l| Label {
                label_id: l,
                attr_id: l / per_attr,
                value_tokens: vec![100 + l],
            })
            .collect();
        AttributeSchema::new(attributes, labels).unwrap()
    }

    #[test]
    fn hand_counted_example() {
        let s = schema(1, 4);
        let gold = [vec![0, 1], vec![2]];
        let pred = [vec![0], vec![2, 3]];
        let r = MetricsReport::from_sets(&s, &gold, &pred).unwrap();
        assert_eq!(r.totals, Counts { tp: 2, fp: 1, fn_: 1 });
        assert_eq!(format!("{:.2}", r.precision), "66.67");
        assert_eq!(format!("{:.2}", r.recall), "66.67");
        assert_eq!(format!("{:.2}", r.micro_f1), "66.67");
        assert_eq!(format!("{:.2}", r.macro_f1), "50.00");
        let f1s: Vec<f64> = r.per_label.values().map(|s| s.f1).collect();
        assert_eq!(f1s, vec![100.0, 0.0, 100.0, 0.0]);
    }

    #[test]
    fn perfect_predictions() {
        let s = schema(2, 3);
        let gold = [vec![0, 4], vec![1], vec![5]];
        let r = MetricsReport::from_sets(&s, &gold, &gold).unwrap();
        assert_eq!((r.precision, r.recall, r.micro_f1), (100.0, 100.0, 100.0));
        // labels 2 and 3 never occur
        assert_eq!(r.macro_f1, 400.0 / 6.0);
    }

    #[test]
    fn empty_predictions_score_zero() {
        let s = schema(1, 2);
        let r = MetricsReport::from_sets(&s, &[vec![0]], &[Vec::<usize>::new()]).unwrap();
        assert_eq!((r.precision, r.recall, r.micro_f1, r.macro_f1), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn per_attribute_pools_its_labels() {
        let s = schema(2, 2);
        let r = MetricsReport::from_sets(&s, &[vec![0, 2]], &[vec![0, 3]]).unwrap();
        assert_eq!(r.per_attribute[&0], 100.0);
        assert_eq!(r.per_attribute[&1], 0.0);
    }
}
