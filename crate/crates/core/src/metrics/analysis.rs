use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::bleu::corpus_bleu;
use crate::error::Result;

pub const CONFIDENCE_BINS: usize = 10;
pub const PROBABILITY_BINS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean correctness; `None` for an empty bin.
    pub accuracy: Option<f64>,
}

/// Ten equal-width half-open bins `[b/10, (b+1)/10)`; 1.0 joins the last.
pub fn confidence_accuracy_bins(pairs: impl IntoIterator<Item = (f64, bool)>) -> Vec<AccuracyBin> {
    let mut counts = [(0usize, 0usize); CONFIDENCE_BINS];
    for (c, ok) in pairs {
        let b = ((c * CONFIDENCE_BINS as f64).floor().max(0.0) as usize).min(CONFIDENCE_BINS - 1);
        counts[b].0 += 1;
        counts[b].1 += usize::from(ok);
    }
    counts
        .iter()
        .enumerate()
        .map(|(b, &(n, ok))| AccuracyBin {
            lower: b as f64 / CONFIDENCE_BINS as f64,
            upper: (b + 1) as f64 / CONFIDENCE_BINS as f64,
            count: n,
            accuracy: (n > 0).then(|| ok as f64 / n as f64),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub bleu: Option<f64>,
}

/// One sentence with its normalized selection probability.
#[derive(Clone, Debug)]
pub struct ScoredSentence<T> {
    pub probability: f64,
    pub hypothesis: Vec<T>,
    pub reference: Vec<T>,
}

/// Quantile bins over `p(z)^(1/|z|)`. Interior edges are the nearest-rank
/// quantiles; a sentence lands in the bin counting the edges at or below
/// its value, so tied values share a bin.
pub fn bleu_by_path_probability<T: Eq + Hash + Clone>(
    sentences: &[ScoredSentence<T>],
    bins: usize,
) -> Result<Vec<BleuBin>> {
    let bins = bins.max(1);
    let mut sorted: Vec<f64> = sentences.iter().map(|s| s.probability).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let edges: Vec<f64> = (1..bins)
        .map(|b| sorted.get(b * n / bins).copied().unwrap_or(f64::INFINITY))
        .collect();
    let mut members: Vec<Vec<&ScoredSentence<T>>> = vec![Vec::new(); bins];
    for s in sentences {
        let b = edges.iter().filter(|&&e| e <= s.probability).count();
        members[b].push(s);
    }
    let lo = sorted.first().copied().unwrap_or(0.0);
    let hi = sorted.last().copied().unwrap_or(1.0);
    members
        .iter()
        .enumerate()
        .map(|(b, m)| {
            let bleu = if m.is_empty() {
                None
            } else {
                let h: Vec<Vec<T>> = m.iter().map(|s| s.hypothesis.clone()).collect();
                let r: Vec<Vec<T>> = m.iter().map(|s| s.reference.clone()).collect();
                Some(corpus_bleu(&h, &r)?)
            };
            Ok(BleuBin {
                lower: if b == 0 { lo } else { edges[b - 1] },
                upper: if b + 1 == bins { hi } else { edges[b] },
                count: m.len(),
                bleu,
            })
        })
        .collect()
}
