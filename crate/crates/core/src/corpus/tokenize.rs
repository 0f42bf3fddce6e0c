use super::{Vocab, PAD};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    /// Exactly `max_len` ids, padded with [`PAD`].
    pub ids: Vec<usize>,
    /// Number of real tokens before padding.
    pub len: usize,
}

impl Tokenized {
    pub fn unpadded(&self) -> &[usize] {
        &self.ids[..self.len]
    }
}

/// Whitespace tokenization through `vocab`, truncated and padded to `max_len`.
/// Unknown tokens map to `UNK`.
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Tokenized {
    let mut ids: Vec<usize> = text
        .split_whitespace()
        .take(max_len)
        .map(|t| vocab.id_or_unk(t))
        .collect();
    let len = ids.len();
    ids.resize(max_len, PAD);
    Tokenized { ids, len }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::UNK;

    #[test]
    fn maps_and_pads() {
        let mut v = Vocab::new();
        let red = v.insert("red");
        let bottle = v.insert("bottle");
        let t = tokenize("red bottle", &v, 4);
        assert_eq!(t.ids, vec![red, bottle, PAD, PAD]);
        assert_eq!(t.len, 2);
        assert_eq!(t.unpadded(), &[red, bottle]);
    }

    #[test]
    fn truncates_at_max_len() {
        let v = Vocab::new();
        let text = vec!["w"; 300].join(" ");
        let t = tokenize(&text, &v, 256);
        assert_eq!(t.ids.len(), 256);
        assert_eq!(t.len, 256);
    }

    #[test]
    fn unknown_token_is_unk() {
        let v = Vocab::new();
        assert_eq!(tokenize("mystery", &v, 2).ids, vec![UNK, PAD]);
    }
}
