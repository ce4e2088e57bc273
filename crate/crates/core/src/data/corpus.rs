use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// A source/target pair of content ids (no bos or eos).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Reads one-sentence-per-line source and target files.
pub fn load_parallel_lines(src: &Path, tgt: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let s = read_lines(src)?;
    let t = read_lines(tgt)?;
    if s.len() != t.len() {
        return Err(Error::data(format!("line count {} != {}", s.len(), t.len())));
    }
    for (n, (a, b)) in s.iter().zip(&t).enumerate() {
        if a.trim().is_empty() || b.trim().is_empty() {
            return Err(Error::data(format!("empty line at line {}", n + 1)));
        }
    }
    Ok((s, t))
}

pub fn load_parallel_corpus(
    src: &Path,
    tgt: &Path,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Result<Vec<SentencePair>> {
    let (s, t) = load_parallel_lines(src, tgt)?;
    Ok(s.iter()
        .zip(&t)
        .map(|(a, b)| SentencePair {
            source: src_vocab.encode(a),
            target: tgt_vocab.encode(b),
        })
        .collect())
}

/// Reads a monolingual file (one sentence per line), rejecting empty lines.
pub fn load_lines(path: &Path) -> Result<Vec<String>> {
    let lines = read_lines(path)?;
    if let Some(n) = lines.iter().position(|l| l.trim().is_empty()) {
        return Err(Error::data(format!("empty line at line {}", n + 1)));
    }
    Ok(lines)
}
