use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::SentencePair;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// Id of the delayed-copy filler token in [`synthetic_vocab`].
pub const SENTINEL: usize = 4;
pub const SENTINEL_TOKEN: &str = "<nil>";
/// First content id in [`synthetic_vocab`].
pub const FIRST_CONTENT: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// `y = x`.
    Copy,
    /// Consecutive windows of `lag + 1` tokens, each reversed.
    ReverseWindow,
    /// `y_i = x_{i + lag}`, then sentinels.
    DelayedCopy,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(Self::Copy),
            "reverse-window" => Ok(Self::ReverseWindow),
            "delayed-copy" => Ok(Self::DelayedCopy),
            other => Err(Error::contract(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub kind: TaskKind,
    /// Number of content tokens.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub lag: usize,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size: must be positive".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config("min_len: need 1 <= min_len <= max_len".into()));
        }
        Ok(())
    }

    /// One-based aligned source position of each target token, clamped to
    /// the source length.
    pub fn alignments(&self, source_len: usize) -> Vec<usize> {
        let j = source_len;
        match self.kind {
            TaskKind::Copy => (1..=j).collect(),
            TaskKind::DelayedCopy => (1..=j).map(|i| (i + self.lag).min(j)).collect(),
            TaskKind::ReverseWindow => {
                let w = self.lag + 1;
                (0..j).map(|i| ((i / w + 1) * w).min(j)).collect()
            }
        }
    }

    /// Target for a given source under this task.
    pub fn transform(&self, source: &[usize]) -> Vec<usize> {
        let j = source.len();
        match self.kind {
            TaskKind::Copy => source.to_vec(),
            TaskKind::DelayedCopy => (0..j)
                .map(|i| {
                    if i + self.lag < j {
                        source[i + self.lag]
                    } else {
                        SENTINEL
                    }
                })
                .collect(),
            TaskKind::ReverseWindow => {
                let w = self.lag + 1;
                source.chunks(w).flat_map(|c| c.iter().rev().copied()).collect()
            }
        }
    }
}

/// Reserved ids, the sentinel, then content tokens `w0, w1, ...`.
pub fn synthetic_vocab(vocab_size: usize) -> Vocabulary {
    let mut extra = vec![SENTINEL_TOKEN.to_string()];
    extra.extend((0..vocab_size).map(|i| format!("w{i}")));
    Vocabulary::with_tokens(&extra).expect("synthetic tokens are distinct")
}

/// `n` pairs drawn deterministically from `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticTaskSpec, n: usize) -> Result<Vec<SentencePair>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..n)
        .map(|_| {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let source: Vec<usize> = (0..len)
                .map(|_| FIRST_CONTENT + rng.gen_range(0..spec.vocab_size))
                .collect();
            let target = spec.transform(&source);
            SentencePair { source, target }
        })
        .collect())
}
