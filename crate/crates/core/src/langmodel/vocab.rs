use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";

/// Bijective token ↔ id map. `<unk>` is id 0 and `<eos>` id 1; corpus
/// tokens follow by descending frequency, ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Build from whitespace-tokenized text.
    ///
    /// `max_size` caps `|V|` (specials included); `min_count` drops rarer
    /// tokens. Everything cut maps to `<unk>`.
    pub fn build(text: &str, max_size: Option<usize>, min_count: usize) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for tok in text.split_whitespace() {
            if tok != UNK && tok != EOS {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if counts.is_empty() && text.split_whitespace().next().is_none() {
            return Err(Error::Empty("vocabulary text".into()));
        }
        if max_size.is_some_and(|m| m < 2) {
            return Err(Error::Param("vocabulary needs room for <unk> and <eos>".into()));
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        if let Some(m) = max_size {
            ranked.truncate(m - 2);
        }
        let mut tokens = vec![UNK.to_string(), EOS.to_string()];
        tokens.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
        Ok(tokens.into())
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != UNK || tokens[1] != EOS {
            return Err(Error::Format("vocabulary must start with <unk>, <eos>".into()));
        }
        let v: Vocabulary = tokens.into();
        if v.index.len() != v.tokens.len() {
            return Err(Error::Format("vocabulary contains duplicate tokens".into()));
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        0
    }

    pub fn eos_id(&self) -> usize {
        1
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Encode text line by line, appending `<eos>` to every line.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut ids = Vec::new();
        for line in text.lines() {
            let mut any = false;
            for tok in line.split_whitespace() {
                ids.push(self.id(tok));
                any = true;
            }
            if any {
                ids.push(self.eos_id());
            }
        }
        ids
    }
}

/// Token-id streams of the three splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl Corpus {
    /// Encode three texts; the vocabulary comes from the training text
    /// unless one is supplied.
    pub fn from_texts(train: &str, valid: &str, test: &str, vocab: Option<Vocabulary>, max_vocab: Option<usize>) -> Result<Self> {
        let vocab = match vocab {
            Some(v) => v,
            None => Vocabulary::build(train, max_vocab, 1)?,
        };
        Ok(Self {
            train: vocab.encode(train),
            valid: vocab.encode(valid),
            test: vocab.encode(test),
            vocab,
        })
    }

    pub fn load(train: &Path, valid: &Path, test: &Path, vocab: Option<Vocabulary>, max_vocab: Option<usize>) -> Result<Self> {
        Self::from_texts(&read_text(train)?, &read_text(valid)?, &read_text(test)?, vocab, max_vocab)
    }

    pub fn split(&self, s: Split) -> &[usize] {
        match s {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_order_after_specials() {
        let v = Vocabulary::build("a a b", None, 1).unwrap();
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), 3);
        assert_eq!(v.len(), 4);
        assert_eq!(v.token(2), Some("a"));
    }

    #[test]
    fn lexicographic_ties() {
        let v = Vocabulary::build("z y x y z", None, 1).unwrap();
        assert_eq!(v.tokens()[2..], ["y".to_string(), "z".to_string(), "x".to_string()]);
    }

    #[test]
    fn truncation_maps_tail_to_unk() {
        let v = Vocabulary::build("a a a b b c", Some(4), 1).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("c"), v.unk_id());
        assert_eq!(v.encode("a c\nb"), vec![2, 0, 1, 3, 1]);
    }

    #[test]
    fn literal_unk_respected() {
        let v = Vocabulary::build("the <unk> cat\nthe dog", None, 1).unwrap();
        assert_eq!(v.encode("the <unk> cat"), vec![2, 0, v.id("cat"), 1]);
        assert!(v.tokens().iter().filter(|t| *t == UNK).count() == 1);
    }

    #[test]
    fn empty_text_rejected() {
        assert!(matches!(Vocabulary::build("  \n ", None, 1), Err(Error::Empty(_))));
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocabulary::build("a b c a", None, 1).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
    }
}
