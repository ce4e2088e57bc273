use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Token table with the four reserved ids at `0..4`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its id-ordered token list (reserved tokens
    /// included).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::data("vocabulary must start with <pad> <s> </s> <unk>"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::data(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Reserved ids followed by `extra` in order.
    pub fn with_tokens<S: AsRef<str>>(extra: &[S]) -> Result<Self> {
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(extra.iter().map(|s| s.as_ref().to_string()))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Whitespace-split encoding; unknown tokens map to `UNK`.
    pub fn encode(&self, line: &str) -> Vec<usize> {
        line.split_whitespace().map(|t| self.id(t).unwrap_or(UNK)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(RESERVED[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Vocabulary of every token seen at least `min_frequency` times, by
/// descending frequency then lexicographically.
pub fn build_vocab<S: AsRef<str>>(lines: &[S], min_frequency: usize) -> Result<Vocabulary> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for line in lines {
        for tok in line.as_ref().split_whitespace() {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::data("cannot build a vocabulary from an empty corpus"));
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(tok, c)| c >= min_frequency.max(1) && !RESERVED.contains(&tok))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let tokens: Vec<&str> = kept.into_iter().map(|(t, _)| t).collect();
    Vocabulary::with_tokens(&tokens)
}
