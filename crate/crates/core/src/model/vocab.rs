//! Caption vocabulary with reserved control tokens.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ingest::DenseAnnotation;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Control tokens followed by `words` in sorted order.
    pub fn from_words<I: IntoIterator<Item = String>>(words: I) -> Self {
        let set: BTreeSet<String> = words.into_iter().filter(|w| !SPECIALS.contains(&w.as_str())).collect();
        let tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).chain(set).collect();
        Vocab::from(tokens)
    }

    pub fn from_annotations(annotations: &[DenseAnnotation]) -> Self {
        Self::from_words(annotations.iter().flat_map(|a| a.events.iter().flat_map(|e| e.sentence.iter().cloned())))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Token ids followed by the end token.
    pub fn encode(&self, sentence: &[String]) -> Vec<usize> {
        sentence.iter().map(|t| self.id(t)).chain(std::iter::once(EOS)).collect()
    }

    /// Words up to (excluding) the first end token; control tokens dropped.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i > UNK)
            .map(|&i| self.tokens[i].clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode() {
        let v = Vocab::from_words(["b", "a", "b"].map(String::from));
        assert_eq!(v.len(), 6);
        let ids = v.encode(&["a".into(), "zz".into(), "b".into()]);
        assert_eq!(ids, vec![4, UNK, 5, EOS]);
        assert_eq!(v.decode(&ids), vec!["a", "b"]);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }
}
