use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and hypothesis n-gram totals per order.
fn sufficient_stats<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> [(usize, usize); MAX_ORDER] {
    let mut stats = [(0, 0); MAX_ORDER];
    for (n, slot) in stats.iter_mut().enumerate() {
        let h = ngram_counts(hyp, n + 1);
        let r = ngram_counts(reference, n + 1);
        let matched = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
        *slot = (matched, hyp.len().saturating_sub(n));
    }
    stats
}

/// Corpus BLEU-4 on a 0 to 100 scale. Orders two and up use add-one
/// smoothing of matches and totals; unigram precision is unsmoothed.
pub fn corpus_bleu<T: Eq + Hash>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::data("no hypotheses to score"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::data(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut totals = [(0usize, 0usize); MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        for (t, s) in totals.iter_mut().zip(sufficient_stats(h, r)) {
            t.0 += s.0;
            t.1 += s.1;
        }
        hyp_len += h.len();
        ref_len += r.len();
    }
    let (m1, c1) = totals[0];
    if m1 == 0 || c1 == 0 {
        return Ok(0.0);
    }
    let mut log_p = (m1 as f64 / c1 as f64).ln();
    for &(m, c) in &totals[1..] {
        log_p += ((m + 1) as f64 / (c + 1) as f64).ln();
    }
    let bp = if hyp_len < ref_len {
        1.0 - ref_len as f64 / hyp_len as f64
    } else {
        0.0
    };
    Ok(100.0 * (bp + log_p / MAX_ORDER as f64).exp())
}

/// Whitespace tokenization for scoring text lines.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_owned).collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn toks(lines: &[&str]) -> Vec<Vec<String>> {
        lines.iter().map(|l| tokenize(l)).collect()
    }

    #[test]
    fn identical_is_hundred() {
        let h = toks(&["a b c d e", "x y"]);
        assert_eq!(corpus_bleu(&h, &h).unwrap(), 100.0);
    }

    #[test]
    fn disjoint_is_zero() {
        assert_eq!(corpus_bleu(&toks(&["a b c"]), &toks(&["d e f"])).unwrap(), 0.0);
    }

    #[test]
    fn two_sentence_golden() {
        // matches/totals: 1-grams 7/8, 2-grams 3+1 of 5+1, 3-grams 1+0 of 4+0,
        // 4-grams 0 of 3; smoothed p = 7/8, 5/7, 2/5, 1/4 with product 1/16;
        // lengths 8 vs 9 give BP = exp(-1/8)
        let h = toks(&["the cat sat on the mat", "a dog"]);
        let r = toks(&["the cat is on the mat", "a dog runs"]);
        let got = corpus_bleu(&h, &r).unwrap();
        let want = 50.0 * (-0.125f64).exp();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn clipping_limits_repeats() {
        // unigram: "the" x3 clipped to 1 of 3; orders 2..4 unmatched
        let got = corpus_bleu(&toks(&["the the the"]), &toks(&["the cat sat"])).unwrap();
        let want = 100.0 * (1.0f64 / 3.0 * (1.0 / 3.0) * (1.0 / 2.0) * 1.0).powf(0.25);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn errors_on_bad_input() {
        let empty: Vec<Vec<String>> = Vec::new();
        assert!(corpus_bleu(&empty, &empty).is_err());
        assert!(corpus_bleu(&toks(&["a"]), &toks(&["a", "b"])).is_err());
    }

    proptest! {
        #[test]
        fn self_bleu_is_hundred(lines in prop::collection::vec(prop::collection::vec(0u8..6, 1..12), 1..8)) {
            prop_assert_eq!(corpus_bleu(&lines, &lines).unwrap(), 100.0);
        }

        #[test]
        fn score_in_range(
            h in prop::collection::vec(prop::collection::vec(0u8..5, 0..10), 1..6),
            r in prop::collection::vec(prop::collection::vec(0u8..5, 1..10), 6),
        ) {
            let r = &r[..h.len()];
            let s = corpus_bleu(&h, r).unwrap();
            prop_assert!((0.0..=100.0).contains(&s));
        }
    }
}
