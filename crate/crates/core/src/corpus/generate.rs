use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Attribute, AttributeSchema, Dataset, Label, Product, Vocab};
use crate::error::{Error, Result};
use crate::rng::{self, tag, StreamRng};

/// Shape of a synthetic corpus.
///
/// Every gold value is written verbatim into its product's token stream,
/// surrounded by noise tokens. With `confusability > 0`, values of the same
/// attribute end in a shared unit token (`"1 liter"`, `"2 liter"`), which is
/// what makes same-attribute labels hard to tell apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_attributes: usize,
    pub values_per_attribute: usize,
    /// Overrides `values_per_attribute`, spreading this many values as evenly
    /// as possible across attributes.
    pub total_values: Option<usize>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub avg_labels_per_product: f64,
    /// Mean number of noise tokens per product (drawn uniformly from
    /// half to one and a half times this).
    pub noise_token_count: usize,
    pub noise_vocab_size: usize,
    /// Fraction of each attribute's values carrying the shared unit token.
    pub confusability: f64,
    /// Chance of a second value from an attribute already chosen.
    pub multi_value_rate: f64,
    /// Zipf exponent over values within an attribute; 0 is uniform.
    pub label_skew: f64,
    /// Per gold attribute, chance of also mentioning a non-gold value of the
    /// same attribute without its unit token.
    pub distractor_rate: f64,
    pub max_len: usize,
    pub min_len: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_attributes: 8,
            values_per_attribute: 6,
            total_values: None,
            n_train: 1000,
            n_val: 100,
            n_test: 100,
            avg_labels_per_product: 3.0,
            noise_token_count: 20,
            noise_vocab_size: 400,
            confusability: 1.0,
            multi_value_rate: 0.1,
            label_skew: 0.0,
            distractor_rate: 0.0,
            max_len: 256,
            min_len: 4,
        }
    }
}

impl GenConfig {
    fn values_for(&self, attr: usize) -> usize {
        match self.total_values {
            Some(total) => {
                let base = total / self.n_attributes;
                base + usize::from(attr < total % self.n_attributes)
            }
            None => self.values_per_attribute,
        }
    }

    fn max_labels(&self) -> usize {
        self.avg_labels_per_product.ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_attributes == 0 {
            return bad("n_attributes must be at least 1");
        }
        match self.total_values {
            Some(t) if t < self.n_attributes => {
                return bad("total_values must give every attribute at least one value")
            }
            None if self.values_per_attribute == 0 => {
                return bad("values_per_attribute must be at least 1")
            }
            _ => {}
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return bad("every split needs at least one product");
        }
        if !(self.avg_labels_per_product >= 1.0
            && self.avg_labels_per_product <= self.n_attributes as f64)
        {
            return bad("avg_labels_per_product must lie in [1, n_attributes]");
        }
        for (name, v) in [
            ("confusability", self.confusability),
            ("multi_value_rate", self.multi_value_rate),
            ("distractor_rate", self.distractor_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.label_skew.is_finite() && self.label_skew >= 0.0) {
            return bad("label_skew must be non-negative");
        }
        if self.noise_token_count > 0 && self.noise_vocab_size == 0 {
            return bad("noise tokens requested with an empty noise vocabulary");
        }
        if self.min_len > self.max_len || self.max_len == 0 {
            return bad("need 1 <= min_len <= max_len");
        }
        let value_len = if self.confusability > 0.0 { 2 } else { 1 };
        let distractors = if self.distractor_rate > 0.0 { self.max_labels() } else { 0 };
        let required = self.max_labels() * value_len + distractors;
        if required > self.max_len {
            return Err(Error::Config(format!(
                "up to {required} value tokens per product exceed max_len {}",
                self.max_len
            )));
        }
        Ok(())
    }
}

const ATTRIBUTE_NAMES: &[&str] = &[
    "capacity", "color", "material", "size", "brand", "season", "shape", "pattern", "style",
    "finish", "theme", "power", "weight", "length", "origin", "usage", "holiday", "scent",
    "grade", "width",
];

const UNITS: &[&str] = &[
    "liter", "tone", "fiber", "inch", "line", "month", "form", "print", "look", "coat", "motif",
    "watt", "gram", "meter", "region", "use", "event", "aroma", "class", "cm",
];

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Pronounceable word for `i`; distinct `i` give distinct words.
fn syllable_word(i: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut n = i + base; // at least two syllables
    let mut out = Vec::new();
    while n > 0 {
        let s = n % base;
        out.push(VOWELS[s % VOWELS.len()]);
        out.push(CONSONANTS[s / VOWELS.len()]);
        n /= base;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

struct WordSource {
    next: usize,
}

impl WordSource {
    fn fresh(&mut self, vocab: &mut Vocab) -> usize {
        loop {
            let w = syllable_word(self.next);
            self.next += 1;
            if vocab.id(&w).is_none() {
                return vocab.insert(&w);
            }
        }
    }

    fn named(&mut self, vocab: &mut Vocab, preferred: Option<&str>) -> usize {
        match preferred {
            Some(w) if vocab.id(w).is_none() => vocab.insert(w),
            _ => self.fresh(vocab),
        }
    }
}

struct Generated {
    schema: AttributeSchema,
    vocab: Vocab,
    noise: Vec<usize>,
    /// Per label: whether it carries the shared unit token.
    confusable: Vec<bool>,
}

fn build_schema(cfg: &GenConfig) -> Result<Generated> {
    let mut vocab = Vocab::new();
    let mut words = WordSource { next: 0 };
    let mut attributes = Vec::with_capacity(cfg.n_attributes);
    let mut labels = Vec::new();
    let mut confusable = Vec::new();
    for a in 0..cfg.n_attributes {
        let name = words.named(&mut vocab, ATTRIBUTE_NAMES.get(a).copied());
        attributes.push(Attribute {
            attr_id: a,
            name_tokens: vec![name],
        });
        let n_values = cfg.values_for(a);
        let n_conf = (cfg.confusability * n_values as f64).round() as usize;
        let unit = (n_conf > 0).then(|| words.named(&mut vocab, UNITS.get(a).copied()));
        for v in 0..n_values {
            let word = words.fresh(&mut vocab);
            let mut value_tokens = vec![word];
            let is_conf = v < n_conf;
            if is_conf {
                value_tokens.push(unit.expect("unit exists when n_conf > 0"));
            }
            confusable.push(is_conf);
            labels.push(Label {
                label_id: labels.len(),
                attr_id: a,
                value_tokens,
            });
        }
    }
    let noise = (0..cfg.noise_vocab_size)
        .map(|_| words.fresh(&mut vocab))
        .collect();
    Ok(Generated {
        schema: AttributeSchema::new(attributes, labels)?,
        vocab,
        noise,
        confusable,
    })
}

fn pick_weighted(rng: &mut StreamRng, items: &[usize], skew: f64) -> usize {
    if skew == 0.0 {
        return *items.choose(rng).expect("non-empty");
    }
    // weights follow the value's rank inside its attribute
    let weights: Vec<f64> = (0..items.len())
        .map(|r| 1.0 / ((r + 1) as f64).powf(skew))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (item, w) in items.iter().zip(&weights) {
        if x < *w {
            return *item;
        }
        x -= w;
    }
    *items.last().expect("non-empty")
}

fn generate_product(
    cfg: &GenConfig,
    g: &Generated,
    product_id: u64,
    rng: &mut StreamRng,
) -> Product {
    let schema = &g.schema;
    let n_total = schema.n_labels();
    let avg = cfg.avg_labels_per_product;
    let frac = avg - avg.floor();
    let mut m = avg.floor() as usize + usize::from(rng.random::<f64>() < frac);
    m = m.clamp(1, n_total);

    let mut attrs: Vec<usize> = schema.a2l().keys().copied().collect();
    attrs.shuffle(rng);
    let mut gold = Vec::with_capacity(m);
    for &a in &attrs {
        if gold.len() >= m {
            break;
        }
        let values = &schema.a2l()[&a];
        let first = pick_weighted(rng, values, cfg.label_skew);
        gold.push(first);
        if gold.len() < m && values.len() > 1 && rng.random::<f64>() < cfg.multi_value_rate {
            let rest: Vec<usize> = values.iter().copied().filter(|&v| v != first).collect();
            gold.push(pick_weighted(rng, &rest, cfg.label_skew));
        }
    }
    gold.sort_unstable();

    let mut segments: Vec<Vec<usize>> = gold
        .iter()
        .map(|&l| schema.labels()[l].value_tokens.clone())
        .collect();
    if cfg.distractor_rate > 0.0 {
        for (a, golds) in schema.gold_by_attribute(&gold) {
            if rng.random::<f64>() >= cfg.distractor_rate {
                continue;
            }
            let others: Vec<usize> = schema.a2l()[&a]
                .iter()
                .copied()
                .filter(|l| !golds.contains(l) && g.confusable[*l])
                .collect();
            if let Some(&d) = others.choose(rng) {
                let v = &schema.labels()[d].value_tokens;
                segments.push(v[..v.len() - 1].to_vec());
            }
        }
    }

    let required: usize = segments.iter().map(Vec::len).sum();
    let room = cfg.max_len - required;
    let n = cfg.noise_token_count;
    let mut n_noise = if n == 0 {
        0
    } else {
        rng.random_range(n / 2..=n + n / 2)
    };
    n_noise = n_noise.max(cfg.min_len.saturating_sub(required)).min(room);
    for _ in 0..n_noise {
        let tok = *g.noise.choose(rng).expect("noise vocabulary non-empty");
        segments.push(vec![tok]);
    }
    segments.shuffle(rng);
    Product {
        product_id,
        tokens: segments.concat(),
        gold_labels: gold,
    }
}

/// Generates a dataset. Pure in `(cfg, seed)`: each product draws from its
/// own stream keyed by `(seed, split, index)`.
pub fn generate_corpus(cfg: &GenConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let g = build_schema(cfg)?;
    let mut next_id = 0u64;
    let mut make_split = |split_tag: u64, count: usize| -> Vec<Product> {
        (0..count)
            .map(|i| {
                let mut rng = rng::stream(seed, &[tag::GEN_PRODUCT, split_tag, i as u64]);
                let p = generate_product(cfg, &g, next_id, &mut rng);
                next_id += 1;
                p
            })
            .collect()
    };
    let train = make_split(0, cfg.n_train);
    let val = make_split(1, cfg.n_val);
    let test = make_split(2, cfg.n_test);
    Ok(Dataset {
        schema: g.schema,
        vocab: g.vocab,
        train,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::contains_subsequence;

    fn small() -> GenConfig {
        GenConfig {
            n_attributes: 2,
            values_per_attribute: 2,
            n_train: 1,
            n_val: 1,
            n_test: 1,
            avg_labels_per_product: 2.0,
            multi_value_rate: 0.0,
            ..GenConfig::default()
        }
    }

    #[test]
    fn tiny_corpus_embeds_values() {
        let ds = generate_corpus(&small(), 7).unwrap();
        let p = &ds.train[0];
        assert_eq!(p.gold_labels.len(), 2);
        for &g in &p.gold_labels {
            assert!(contains_subsequence(
                &p.tokens,
                &ds.schema.labels()[g].value_tokens
            ));
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let cfg = GenConfig {
            n_train: 50,
            distractor_rate: 0.5,
            label_skew: 1.0,
            ..GenConfig::default()
        };
        assert_eq!(generate_corpus(&cfg, 3).unwrap(), generate_corpus(&cfg, 3).unwrap());
        assert_ne!(
            generate_corpus(&cfg, 3).unwrap().train,
            generate_corpus(&cfg, 4).unwrap().train
        );
    }

    #[test]
    fn twelve_attributes_154_values_is_accepted() {
        let cfg = GenConfig {
            n_attributes: 12,
            total_values: Some(154),
            avg_labels_per_product: 5.83,
            n_train: 200,
            n_val: 10,
            n_test: 10,
            ..GenConfig::default()
        };
        let ds = generate_corpus(&cfg, 1).unwrap();
        assert_eq!(ds.schema.attributes().len(), 12);
        assert_eq!(ds.n_labels(), 154);
    }

    #[test]
    fn confusable_values_share_unit() {
        let ds = generate_corpus(&small(), 1).unwrap();
        for labels in ds.schema.a2l().values() {
            let units: Vec<usize> = labels
                .iter()
                .map(|&l| *ds.schema.labels()[l].value_tokens.last().unwrap())
                .collect();
            assert!(units.windows(2).all(|w| w[0] == w[1]));
        }
        let plain = GenConfig {
            confusability: 0.0,
            ..small()
        };
        let ds = generate_corpus(&plain, 1).unwrap();
        assert!(ds.schema.labels().iter().all(|l| l.value_tokens.len() == 1));
    }

    #[test]
    fn rejects_values_longer_than_max_len() {
        let cfg = GenConfig {
            n_attributes: 10,
            avg_labels_per_product: 10.0,
            max_len: 12,
            ..GenConfig::default()
        };
        assert!(matches!(generate_corpus(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_counts() {
        for cfg in [
            GenConfig { n_attributes: 0, ..GenConfig::default() },
            GenConfig { n_train: 0, ..GenConfig::default() },
            GenConfig { avg_labels_per_product: 9.0, ..GenConfig::default() },
            GenConfig { confusability: 1.5, ..GenConfig::default() },
        ] {
            assert!(generate_corpus(&cfg, 0).is_err());
        }
    }

    #[test]
    fn words_are_distinct() {
        let words: std::collections::HashSet<String> = (0..5000).map(syllable_word).collect();
        assert_eq!(words.len(), 5000);
    }
}
