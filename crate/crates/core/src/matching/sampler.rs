use std::collections::BTreeMap;

use rand::Rng;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NegSampleResult {
    /// Sorted, distinct.
    pub neg_label_ids: Vec<usize>,
    /// Negatives drawn per gold attribute (including zeros).
    pub per_attribute_counts: BTreeMap<usize, usize>,
}

/// Draws same-attribute negatives for one product.
///
/// For each attribute that has gold labels, the candidates are that
/// attribute's other labels. As many negatives as there are gold labels in
/// the attribute are drawn uniformly without replacement, capped at the
/// number of candidates. Attributes without gold labels contribute nothing.
pub fn sample_negative_labels<R: Rng + ?Sized>(
    a2l: &BTreeMap<usize, Vec<usize>>,
    gold_by_attribute: &BTreeMap<usize, Vec<usize>>,
    rng: &mut R,
) -> NegSampleResult {
    let mut out = NegSampleResult::default();
    for (&attr, gold) in gold_by_attribute {
        let all = a2l.get(&attr).map(Vec::as_slice).unwrap_or(&[]);
        let candidates: Vec<usize> = all.iter().copied().filter(|l| !gold.contains(l)).collect();
        let n_neg = gold.len().min(candidates.len());
        for i in rand::seq::index::sample(rng, candidates.len(), n_neg) {
            out.neg_label_ids.push(candidates[i]);
        }
        out.per_attribute_counts.insert(attr, n_neg);
    }
    out.neg_label_ids.sort_unstable();
    out
}
