use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corpus::SentencePair;
use super::vocab::{BOS, EOS, PAD};
use crate::error::{Error, Result};

/// Padded batch of pairs. Source rows end with eos; target inputs start with
/// bos and target outputs end with eos. Lengths include those markers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelBatch {
    pub source: Vec<Vec<usize>>,
    pub target_in: Vec<Vec<usize>>,
    pub target_out: Vec<Vec<usize>>,
    pub source_lens: Vec<usize>,
    pub target_lens: Vec<usize>,
}

/// One unpadded training example as the model consumes it.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub source: &'a [usize],
    pub target_in: &'a [usize],
    pub target_out: &'a [usize],
}

/// Model-side lengths of a pair: source plus eos, target plus bos/eos.
pub fn padded_len(pair: &SentencePair) -> usize {
    (pair.source.len() + 1).max(pair.target.len() + 1)
}

impl ParallelBatch {
    pub fn from_pairs(pairs: &[&SentencePair]) -> Self {
        let j_max = pairs.iter().map(|p| p.source.len() + 1).max().unwrap_or(0);
        let i_max = pairs.iter().map(|p| p.target.len() + 1).max().unwrap_or(0);
        let pad = |mut v: Vec<usize>, n: usize| {
            v.resize(n, PAD);
            v
        };
        let mut b = ParallelBatch {
            source: Vec::new(),
            target_in: Vec::new(),
            target_out: Vec::new(),
            source_lens: Vec::new(),
            target_lens: Vec::new(),
        };
        for p in pairs {
            let src: Vec<usize> = p.source.iter().copied().chain([EOS]).collect();
            let tin: Vec<usize> = [BOS].into_iter().chain(p.target.iter().copied()).collect();
            let tout: Vec<usize> = p.target.iter().copied().chain([EOS]).collect();
            b.source_lens.push(src.len());
            b.target_lens.push(tout.len());
            b.source.push(pad(src, j_max));
            b.target_in.push(pad(tin, i_max));
            b.target_out.push(pad(tout, i_max));
        }
        b
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// Padded token count `B * max(J_max, I_max)`.
    pub fn cost(&self) -> usize {
        let width = self
            .source
            .first()
            .map_or(0, Vec::len)
            .max(self.target_in.first().map_or(0, Vec::len));
        self.len() * width
    }

    pub fn example(&self, b: usize) -> Example<'_> {
        Example {
            source: &self.source[b][..self.source_lens[b]],
            target_in: &self.target_in[b][..self.target_lens[b]],
            target_out: &self.target_out[b][..self.target_lens[b]],
        }
    }

    pub fn examples(&self) -> impl Iterator<Item = Example<'_>> {
        (0..self.len()).map(|b| self.example(b))
    }

    /// Checks the padding, marker and length invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if [
            self.target_in.len(),
            self.target_out.len(),
            self.source_lens.len(),
            self.target_lens.len(),
        ]
        .iter()
        .any(|&m| m != n)
        {
            return Err(Error::data("batch fields disagree on the number of rows"));
        }
        for b in 0..n {
            let (sl, tl) = (self.source_lens[b], self.target_lens[b]);
            let src = &self.source[b];
            let (tin, tout) = (&self.target_in[b], &self.target_out[b]);
            if sl == 0 || tl == 0 {
                return Err(Error::data(format!("row {b}: zero length")));
            }
            if sl > src.len() || tl > tin.len() || tin.len() != tout.len() {
                return Err(Error::data(format!("row {b}: length exceeds padded width")));
            }
            if src[sl..].iter().chain(&tin[tl..]).chain(&tout[tl..]).any(|&x| x != PAD) {
                return Err(Error::data(format!("row {b}: non-pad token beyond recorded length")));
            }
            if tin[0] != BOS {
                return Err(Error::data(format!("row {b}: target input does not start with bos")));
            }
            if tout[..tl].iter().filter(|&&x| x == EOS).count() != 1 || tout[tl - 1] != EOS {
                return Err(Error::data(format!(
                    "row {b}: eos must appear once, at position {}",
                    tl - 1
                )));
            }
            if src[..sl].iter().filter(|&&x| x == EOS).count() != 1 || src[sl - 1] != EOS {
                return Err(Error::data(format!("row {b}: source must end with its only eos")));
            }
        }
        Ok(())
    }
}

/// Greedy length-bucketed packing under a padded-token budget; batch order
/// is shuffled with `seed`.
pub fn make_batches(pairs: &[SentencePair], max_tokens: usize, seed: u64) -> Result<Vec<ParallelBatch>> {
    if let Some((n, p)) = pairs.iter().enumerate().find(|(_, p)| padded_len(p) > max_tokens) {
        return Err(Error::data(format!(
            "pair {n} needs {} tokens, more than the batch budget {max_tokens}",
            padded_len(p)
        )));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by_key(|&i| (pairs[i].target.len(), pairs[i].source.len(), i));
    let mut groups: Vec<Vec<&SentencePair>> = Vec::new();
    let mut current: Vec<&SentencePair> = Vec::new();
    let mut width = 0;
    for i in order {
        let p = &pairs[i];
        let w = width.max(padded_len(p));
        if !current.is_empty() && (current.len() + 1) * w > max_tokens {
            groups.push(std::mem::take(&mut current));
            width = 0;
        }
        width = width.max(padded_len(p));
        current.push(p);
    }
    if !current.is_empty() {
        groups.push(current);
    }
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(groups.iter().map(|g| ParallelBatch::from_pairs(g)).collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn pair(src: usize, tgt: usize) -> SentencePair {
        SentencePair {
            source: (0..src).map(|i| 5 + i % 3).collect(),
            target: (0..tgt).map(|i| 6 + i % 4).collect(),
        }
    }

    #[test]
    fn short_pairs_share_a_batch() {
        let pairs = vec![pair(2, 2), pair(9, 9), pair(2, 2)];
        let batches = make_batches(&pairs, 10, 0).unwrap();
        assert_eq!(batches.len(), 2);
        let sizes: Vec<usize> = batches.iter().map(ParallelBatch::len).collect();
        assert!(sizes.contains(&2) && sizes.contains(&1));
        for b in &batches {
            assert!(b.cost() <= 10);
            b.validate().unwrap();
        }
    }

    #[test]
    fn over_budget_is_an_error() {
        assert!(make_batches(&[pair(12, 3)], 10, 0).is_err());
    }

    #[test]
    fn same_seed_same_order() {
        let pairs: Vec<_> = (1..30).map(|n| pair(n % 7 + 1, n % 5 + 1)).collect();
        assert_eq!(
            make_batches(&pairs, 24, 4).unwrap(),
            make_batches(&pairs, 24, 4).unwrap()
        );
    }

    #[test]
    fn validator_rejects_broken_padding() {
        let mut b = ParallelBatch::from_pairs(&[&pair(2, 3), &pair(4, 1)]);
        b.validate().unwrap();
        b.target_out[1][3] = 7;
        assert!(b.validate().is_err());
    }

    proptest! {
        #[test]
        fn random_batches_hold_invariants(
            lens in proptest::collection::vec((1usize..12, 1usize..12), 1..40),
            budget in 13usize..60, seed in 0u64..100,
        ) {
            let pairs: Vec<_> = lens.iter().map(|&(s, t)| pair(s, t)).collect();
            let batches = make_batches(&pairs, budget, seed).unwrap();
            let total: usize = batches.iter().map(ParallelBatch::len).sum();
            prop_assert_eq!(total, pairs.len());
            for b in &batches {
                prop_assert!(b.cost() <= budget);
                prop_assert!(b.validate().is_ok());
                for ex in b.examples() {
                    prop_assert_eq!(ex.target_in.len(), ex.target_out.len());
                    prop_assert_eq!(ex.target_in[0], BOS);
                    prop_assert_eq!(*ex.source.last().unwrap(), EOS);
                }
            }
        }
    }
}
