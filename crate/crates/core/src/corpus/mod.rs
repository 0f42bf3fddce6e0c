//! Attribute schema, products, datasets, and the synthetic corpus generator.

mod generate;
mod io;
mod tokenize;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use generate::{generate_corpus, GenConfig};
pub use io::{load_dataset, save_dataset};
pub use tokenize::{tokenize, Tokenized};

/// Reserved id for out-of-vocabulary tokens.
pub const UNK: usize = 0;
/// Reserved id for padding.
pub const PAD: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub attr_id: usize,
    pub name_tokens: Vec<usize>,
}

/// One attribute value, i.e. one classification target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Label {
    pub label_id: usize,
    pub attr_id: usize,
    pub value_tokens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
    labels: Vec<Label>,
    a2l: BTreeMap<usize, Vec<usize>>,
}

impl AttributeSchema {
    /// Validates and indexes a schema. Labels may be given in any order; they
    /// are stored sorted by id.
    pub fn new(attributes: Vec<Attribute>, mut labels: Vec<Label>) -> Result<Self> {
        labels.sort_by_key(|l| l.label_id);
        for (i, l) in labels.iter().enumerate() {
            if l.label_id != i {
                return Err(Error::Schema(format!(
                    "label ids must be exactly 0..{}; found {} at position {i}",
                    labels.len(),
                    l.label_id
                )));
            }
            if l.value_tokens.is_empty() {
                return Err(Error::Schema(format!("label {i} has no value tokens")));
            }
        }
        let mut a2l: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for a in &attributes {
            if a2l.insert(a.attr_id, Vec::new()).is_some() {
                return Err(Error::Schema(format!("duplicate attribute id {}", a.attr_id)));
            }
        }
        for l in &labels {
            a2l.get_mut(&l.attr_id)
                .ok_or_else(|| {
                    Error::Schema(format!(
                        "label {} refers to unknown attribute {}",
                        l.label_id, l.attr_id
                    ))
                })?
                .push(l.label_id);
        }
        if let Some((a, _)) = a2l.iter().find(|(_, ls)| ls.is_empty()) {
            return Err(Error::Schema(format!("attribute {a} has no labels")));
        }
        Ok(Self {
            attributes,
            labels,
            a2l,
        })
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    /// Attribute id to its sorted label ids.
    pub fn a2l(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.a2l
    }

    pub fn attribute(&self, attr_id: usize) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.attr_id == attr_id)
    }

    pub fn attr_of(&self, label_id: usize) -> usize {
        self.labels[label_id].attr_id
    }

    /// Full label text: attribute name tokens followed by value tokens.
    pub fn label_text_tokens(&self, label_id: usize) -> Vec<usize> {
        let l = &self.labels[label_id];
        let mut toks = self
            .attribute(l.attr_id)
            .map(|a| a.name_tokens.clone())
            .unwrap_or_default();
        toks.extend_from_slice(&l.value_tokens);
        toks
    }

    /// Groups gold label ids by attribute.
    pub fn gold_by_attribute(&self, gold: &[usize]) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &g in gold {
            out.entry(self.attr_of(g)).or_default().push(g);
        }
        for v in out.values_mut() {
            v.sort_unstable();
        }
        out
    }
}

/// Token string to id mapping. Ids 0 and 1 are always `<unk>` and `<pad>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub const UNK_TOKEN: &'static str = "<unk>";
    pub const PAD_TOKEN: &'static str = "<pad>";

    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(Self::UNK_TOKEN);
        v.insert(Self::PAD_TOKEN);
        v
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[UNK] != Self::UNK_TOKEN || tokens[PAD] != Self::PAD_TOKEN {
            return Err(Error::Schema(
                "vocab must start with <unk>, <pad>".to_string(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate vocab token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Returns the id of `tok`, adding it if new.
    pub fn insert(&mut self, tok: &str) -> usize {
        if let Some(&id) = self.index.get(tok) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(tok.to_string());
        self.index.insert(tok.to_string(), id);
        id
    }

    pub fn id(&self, tok: &str) -> Option<usize> {
        self.index.get(tok).copied()
    }

    pub fn id_or_unk(&self, tok: &str) -> usize {
        self.id(tok).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(Self::UNK_TOKEN, String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn render(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Product {
    pub product_id: u64,
    /// Title then description, unpadded.
    pub tokens: Vec<usize>,
    /// Sorted, distinct.
    pub gold_labels: Vec<usize>,
}

impl Product {
    pub fn gold_multihot(&self, n_labels: usize) -> Vec<f64> {
        let mut v = vec![0.0; n_labels];
        for &g in &self.gold_labels {
            v[g] = 1.0;
        }
        v
    }

    /// True when every gold value appears verbatim in the token stream.
    pub fn contains_gold_values(&self, schema: &AttributeSchema) -> bool {
        self.gold_labels.iter().all(|&g| {
            let needle = &schema.labels()[g].value_tokens;
            contains_subsequence(&self.tokens, needle)
        })
    }
}

pub fn contains_subsequence(hay: &[usize], needle: &[usize]) -> bool {
    needle.is_empty() || hay.windows(needle.len()).any(|w| w == needle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split `{other}` (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub schema: AttributeSchema,
    pub vocab: Vocab,
    pub train: Vec<Product>,
    pub val: Vec<Product>,
    pub test: Vec<Product>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Product] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn n_labels(&self) -> usize {
        self.schema.n_labels()
    }

    /// Hex digest identifying the schema together with its vocabulary.
    pub fn fingerprint(&self) -> String {
        schema_fingerprint(&self.schema, &self.vocab)
    }

    /// Checks that every product can be encoded with kernel width `k`.
    pub fn validate_for_kernel(&self, k: usize) -> Result<()> {
        for split in Split::ALL {
            for p in self.split(split) {
                let len = p.tokens.iter().take_while(|&&t| t != PAD).count();
                if len < k {
                    return Err(Error::SequenceTooShort { len, kernel: k });
                }
            }
        }
        Ok(())
    }

    /// Checks split disjointness, label bounds, and token bounds.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_labels();
        let mut seen = std::collections::HashSet::new();
        for split in Split::ALL {
            for p in self.split(split) {
                if !seen.insert(p.product_id) {
                    return Err(Error::Schema(format!(
                        "product {} appears more than once",
                        p.product_id
                    )));
                }
                if p.gold_labels.is_empty() {
                    return Err(Error::EmptyGoldSet);
                }
                if p.gold_labels.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Schema(format!(
                        "product {} gold labels not sorted/distinct",
                        p.product_id
                    )));
                }
                if let Some(&bad) = p.gold_labels.iter().find(|&&g| g >= n) {
                    return Err(Error::UnknownLabel {
                        file: split.name().to_string(),
                        line: 0,
                        product_id: p.product_id,
                        label_id: bad,
                        n_labels: n,
                    });
                }
                if let Some(&bad) = p.tokens.iter().find(|&&t| t >= self.vocab.len()) {
                    return Err(Error::TokenOutOfRange {
                        id: bad,
                        vocab: self.vocab.len(),
                    });
                }
            }
        }
        Ok(())
    }
}

pub fn schema_fingerprint(schema: &AttributeSchema, vocab: &Vocab) -> String {
    let mut h = Sha256::new();
    for t in vocab.tokens() {
        h.update(t.as_bytes());
        h.update([0u8]);
    }
    h.update([0xffu8]);
    for a in schema.attributes() {
        h.update((a.attr_id as u64).to_le_bytes());
        for &t in &a.name_tokens {
            h.update((t as u64).to_le_bytes());
        }
        h.update([0xfeu8]);
    }
    for l in schema.labels() {
        h.update((l.label_id as u64).to_le_bytes());
        h.update((l.attr_id as u64).to_le_bytes());
        for &t in &l.value_tokens {
            h.update((t as u64).to_le_bytes());
        }
        h.update([0xfdu8]);
    }
    let digest = h.finalize();
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr(id: usize, tok: usize) -> Attribute {
        Attribute {
            attr_id: id,
            name_tokens: vec![tok],
        }
    }

    fn label(id: usize, attr_id: usize, toks: &[usize]) -> Label {
        Label {
            label_id: id,
            attr_id,
            value_tokens: toks.to_vec(),
        }
    }

    #[test]
    fn schema_builds_a2l() {
        let s = AttributeSchema::new(
            vec![attr(0, 2), attr(1, 3)],
            vec![label(2, 1, &[6]), label(0, 0, &[4]), label(1, 0, &[5])],
        )
        .unwrap();
        assert_eq!(s.a2l()[&0], vec![0, 1]);
        assert_eq!(s.a2l()[&1], vec![2]);
        assert_eq!(s.label_text_tokens(2), vec![3, 6]);
        let g = s.gold_by_attribute(&[2, 1]);
        assert_eq!(g[&0], vec![1]);
        assert_eq!(g[&1], vec![2]);
    }

    #[test]
    fn schema_rejects_bad_input() {
        // gap in label ids
        assert!(AttributeSchema::new(vec![attr(0, 2)], vec![label(1, 0, &[4])]).is_err());
        // unknown attribute
        assert!(AttributeSchema::new(vec![attr(0, 2)], vec![label(0, 5, &[4])]).is_err());
        // attribute without labels
        assert!(AttributeSchema::new(vec![attr(0, 2), attr(1, 3)], vec![label(0, 0, &[4])]).is_err());
        // empty value
        assert!(AttributeSchema::new(vec![attr(0, 2)], vec![label(0, 0, &[])]).is_err());
    }

    #[test]
    fn vocab_reserves_unk_and_pad() {
        let mut v = Vocab::new();
        assert_eq!(v.id("<unk>"), Some(UNK));
        assert_eq!(v.id("<pad>"), Some(PAD));
        assert_eq!(v.insert("red"), 2);
        assert_eq!(v.insert("red"), 2);
        assert_eq!(v.id_or_unk("blue"), UNK);
        assert!(Vocab::from_tokens(vec!["a".into(), "b".into()]).is_err());
    }

    #[test]
    fn split_parse() {
        assert_eq!("val".parse::<Split>().unwrap(), Split::Val);
        assert!("dev".parse::<Split>().is_err());
    }
}
