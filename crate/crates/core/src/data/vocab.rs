use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::corpus::Example;

pub const UNK: &str = "<unk>";
pub const UNK_INDEX: usize = 0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    lowercase: bool,
}

impl Vocabulary {
    /// Builds from an ordered token list; `tokens[0]` must be the UNK marker.
    pub fn from_tokens(tokens: Vec<String>, lowercase: bool) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens,
            index,
            lowercase,
        }
    }

    pub fn normalize(&self, token: &str) -> String {
        if self.lowercase {
            token.to_lowercase()
        } else {
            token.to_string()
        }
    }

    pub fn index(&self, token: &str) -> usize {
        self.index
            .get(&self.normalize(token))
            .copied()
            .unwrap_or(UNK_INDEX)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
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

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    /// Hex SHA-256 over the ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Indexes tokens seen at least `min_count` times, most frequent first,
/// ties broken lexicographically. Index 0 is reserved for UNK.
pub fn build_vocab(examples: &[Example], min_count: usize, lowercase: bool) -> Vocabulary {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for ex in examples {
        for s in [&ex.premise, &ex.hypothesis] {
            for t in s.tokens() {
                let t = if lowercase { t.to_lowercase() } else { t.to_string() };
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count.max(1) && t != UNK)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = std::iter::once(UNK.to_string())
        .chain(kept.into_iter().map(|(t, _)| t))
        .collect();
    Vocabulary::from_tokens(tokens, lowercase)
}

impl Vocabulary {
    /// Rebuilds the lookup map after deserialization.
    pub fn reindex(mut self) -> Self {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        self
    }
}
