//! Selection paths as a hidden Markov model: transitions built from
//! confidences, forward-algorithm marginalization, the three training losses,
//! and enumeration oracles.

mod dp;
mod objective;
mod ops;
pub mod oracle;
mod transition;

pub use dp::{
    expected_latency, expected_latency_with_grad, forward_marginal, forward_table, marginal_with_grad, viterbi,
    ForwardTable, MarginalGrad,
};
pub use objective::{sentence_loss, total_loss, BatchLoss, LossTerms, Objective, SentenceLoss};
pub use ops::{expected_latency_var, marginal_log_likelihood, max_path_log_likelihood};
pub use transition::{transition_logit_vjp, transition_logprob, TransitionTensor};

use crate::error::Result;
use crate::model::{ConfidenceMatrix, LogConfidence, MomentGrid};

/// A hidden selection path `z` (zero-based state per target row).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionPath(pub Vec<usize>);

impl SelectionPath {
    /// Nonzero prior probability requires nondecreasing moments.
    pub fn is_feasible(&self, grid: &MomentGrid) -> bool {
        let mut prev = 0;
        for (i, &k) in self.0.iter().enumerate() {
            let t = grid.get(i, k);
            if t < prev {
                return false;
            }
            prev = t;
        }
        true
    }

    /// `ln p(z)` as the chain of transition probabilities.
    pub fn log_prior(&self, conf: &LogConfidence, grid: &MomentGrid) -> f64 {
        let mut lp = 0.0;
        for (i, &k) in self.0.iter().enumerate() {
            let prev = if i == 0 { None } else { Some(self.0[i - 1]) };
            lp += transition_logprob(conf, grid, i, prev, k);
        }
        lp
    }
}

/// Mean negative log-likelihood over sentences.
pub fn hmm_loss(log_likelihoods: &[f64]) -> f64 {
    -log_likelihoods.iter().sum::<f64>() / log_likelihoods.len() as f64
}

/// Expected latency of one sentence's selection prior.
pub fn expected_latency_loss(c: &ConfidenceMatrix, grid: &MomentGrid) -> f64 {
    let trans = TransitionTensor::new(&LogConfidence::from_confidences(c), grid);
    expected_latency(&trans, grid)
}

/// Per-token state loss of one sentence from its `rows x K` emission
/// log-likelihoods: `-(1 / (I K)) sum_{i,k} e[i][k]`.
pub fn state_loss(emissions: &[f64]) -> f64 {
    -emissions.iter().sum::<f64>() / emissions.len() as f64
}

/// Ablation objective: negative log-probability of the single best path.
pub fn max_selection_loss(emissions: &[f64], c: &ConfidenceMatrix, grid: &MomentGrid) -> Result<f64> {
    let trans = TransitionTensor::new(&LogConfidence::from_confidences(c), grid);
    Ok(-viterbi(emissions, &trans)?.0)
}

/// Marginal negative log-likelihood of one sentence.
pub fn marginal_nll(emissions: &[f64], c: &ConfidenceMatrix, grid: &MomentGrid) -> Result<f64> {
    let trans = TransitionTensor::new(&LogConfidence::from_confidences(c), grid);
    Ok(-forward_marginal(emissions, &trans)?)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::oracle::*;
    use super::*;
    use crate::numerics::{grad_check, Array, Tape, Var, DEFAULT_STEP};

    fn random_instance(
        rng: &mut ChaCha8Rng,
        states: usize,
        rows: usize,
        source_len: usize,
        lower: i64,
    ) -> (Vec<f64>, ConfidenceMatrix, MomentGrid) {
        let grid = MomentGrid::new(lower, states, rows, source_len);
        let c = ConfidenceMatrix::from_probabilities(
            rows,
            states,
            (0..rows * states).map(|_| rng.gen_range(0.02..0.98)).collect(),
        );
        let e = (0..rows * states).map(|_| rng.gen_range(-4.0..-0.01)).collect();
        (e, c, grid)
    }

    #[test]
    fn figure_eight_transition() {
        // z_2 = 3 gives t = 4; judging row 3 from moment 4 rejects s_{3,2},
        // s_{3,3} and selects s_{3,4}.
        let grid = MomentGrid::new(1, 5, 4, 10);
        let mut probs = vec![0.5; 4 * 5];
        probs[2 * 5 + 1] = 0.2;
        probs[2 * 5 + 2] = 0.5;
        probs[2 * 5 + 3] = 0.9;
        let c = ConfidenceMatrix::from_probabilities(4, 5, probs);
        let lc = LogConfidence::from_confidences(&c);
        let p = transition_logprob(&lc, &grid, 2, Some(2), 3).exp();
        assert!((p - 0.8 * 0.5 * 0.9).abs() < 1e-15, "{p}");
        assert!((p - 0.36).abs() < 1e-12);
    }

    #[test]
    fn infeasible_transition_is_neg_infinity() {
        let grid = MomentGrid::new(1, 4, 3, 10);
        let lc = LogConfidence::from_confidences(&ConfidenceMatrix::from_probabilities(3, 4, vec![0.5; 12]));
        // t_{1,4} = 5 > t_{2,1} = 2
        assert_eq!(transition_logprob(&lc, &grid, 1, Some(3), 0), f64::NEG_INFINITY);
    }

    #[test]
    fn emission_independent_of_path() {
        let grid = MomentGrid::new(1, 3, 2, 5);
        let c = ConfidenceMatrix::from_probabilities(2, 3, vec![0.3, 0.6, 0.1, 0.8, 0.4, 0.2]);
        let e = vec![0.5f64.ln(); 6];
        let ll = -marginal_nll(&e, &c, &grid).unwrap();
        assert!((ll - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_state_is_sum_of_emissions() {
        let grid = MomentGrid::new(2, 1, 4, 6);
        let c = ConfidenceMatrix::from_probabilities(4, 1, vec![0.2; 4]);
        let e = vec![-0.1, -0.7, -1.3, -0.05];
        let ll = -marginal_nll(&e, &c, &grid).unwrap();
        assert!((ll - e.iter().sum::<f64>()).abs() < 1e-12);
        assert_eq!(brute_force_marginal(&e, &c, &grid).unwrap(), e.iter().sum::<f64>());
        let ms = max_selection_loss(&e, &c, &grid).unwrap();
        assert!((ms - (-ll)).abs() < 1e-12);
    }

    #[test]
    fn two_path_hand_sum() {
        let grid = MomentGrid::new(2, 2, 1, 5);
        let c = ConfidenceMatrix::from_probabilities(1, 2, vec![0.3, 0.0]);
        let (e1, e2) = (0.4f64, 0.9f64);
        let e = vec![e1.ln(), e2.ln()];
        let expected = (0.3 * e1 + 0.7 * e2).ln();
        assert!((brute_force_marginal(&e, &c, &grid).unwrap() - expected).abs() < 1e-12);
        assert!((-marginal_nll(&e, &c, &grid).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn oracle_refuses_large_instances() {
        let grid = MomentGrid::new(1, 4, 11, 20);
        let c = ConfidenceMatrix::from_probabilities(11, 4, vec![0.5; 44]);
        assert!(matches!(
            brute_force_marginal(&vec![-1.0; 44], &c, &grid),
            Err(crate::Error::OracleTooLarge { .. })
        ));
    }

    #[test]
    fn latency_examples() {
        let grid = MomentGrid::new(2, 2, 1, 5);
        let c = ConfidenceMatrix::from_probabilities(1, 2, vec![0.3, 0.0]);
        assert!((expected_latency_loss(&c, &grid) - 0.7).abs() < 1e-12);

        let grid = MomentGrid::new(1, 3, 4, 9);
        let c = ConfidenceMatrix::from_probabilities(4, 3, vec![1.0; 12]);
        assert!(expected_latency_loss(&c, &grid) < 1e-12);
    }

    #[test]
    fn loss_reductions() {
        assert_eq!(hmm_loss(&[-2.0]), 2.0);
        assert_eq!(hmm_loss(&[-1.0, -3.0]), 2.0);
        assert_eq!(hmm_loss(&[0.0]), 0.0);
        assert_eq!(state_loss(&[-0.5, -1.5]), 1.0);
    }

    #[test]
    fn dp_matches_enumeration_including_clamped_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..200 {
            let states = rng.gen_range(2..=4);
            let rows = rng.gen_range(1..=5);
            let source_len = rng.gen_range(1..=8);
            let lower = rng.gen_range(-1..=3);
            let (e, c, grid) = random_instance(&mut rng, states, rows, source_len, lower);
            let dp = -marginal_nll(&e, &c, &grid).unwrap();
            let bf = brute_force_marginal(&e, &c, &grid).unwrap();
            assert!((dp - bf).abs() < 1e-9, "trial {trial}: {dp} vs {bf}");
            let lat = expected_latency_loss(&c, &grid);
            let lat_bf = brute_force_latency(&c, &grid).unwrap();
            assert!((lat - lat_bf).abs() < 1e-9, "trial {trial}: {lat} vs {lat_bf}");
            let ms = max_selection_loss(&e, &c, &grid).unwrap();
            let ms_bf = -brute_force_max(&e, &c, &grid).unwrap();
            assert!((ms - ms_bf).abs() < 1e-9);
            assert!(ms >= -dp - 1e-12);
        }
    }

    #[test]
    fn positive_prior_paths_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (j, lower) = (rng.gen_range(1..=8), rng.gen_range(-1..=2));
            let (_, c, grid) = random_instance(&mut rng, 3, 4, j, lower);
            let lc = LogConfidence::from_confidences(&c);
            for (path, p) in enumerate_paths(&c, &grid).unwrap() {
                let path = SelectionPath(path);
                if p > 0.0 {
                    assert!(path.is_feasible(&grid));
                }
                let lp = path.log_prior(&lc, &grid);
                assert!((lp.exp() - p).abs() < 1e-12);
            }
        }
    }

    fn split(t: &mut Tape<'_>, v: Var, states: usize) -> crate::Result<(Var, Var)> {
        let e = t.slice_cols(v, 0, states)?;
        let e = t.log_sigmoid(e);
        let a = t.slice_cols(v, states, states)?;
        Ok((e, a))
    }

    #[test]
    fn marginal_op_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (states, rows, j, lower) in [(2, 2, 3, 1), (3, 4, 4, 1), (4, 3, 9, 0), (3, 5, 3, -1)] {
            let grid = MomentGrid::new(lower, states, rows, j);
            let x = Array::from_fn(rows, 2 * states, |_, _| rng.gen_range(-2.0..2.0));
            let g = grid.clone();
            let f = move |t: &mut Tape<'_>, v: Var| {
                let (e, a) = split(t, v, states)?;
                marginal_log_likelihood(t, e, a, &g)
            };
            let err = grad_check(f, &x, DEFAULT_STEP).unwrap();
            assert!(err < 1e-6, "marginal {states}x{rows}: {err}");

            let g = grid.clone();
            let f = move |t: &mut Tape<'_>, v: Var| {
                let (_, a) = split(t, v, states)?;
                expected_latency_var(t, a, &g)
            };
            let err = grad_check(f, &x, DEFAULT_STEP).unwrap();
            assert!(err < 1e-6, "latency {states}x{rows}: {err}");

            let g = grid.clone();
            let f = move |t: &mut Tape<'_>, v: Var| {
                let (e, a) = split(t, v, states)?;
                max_path_log_likelihood(t, e, a, &g)
            };
            let err = grad_check(f, &x, DEFAULT_STEP).unwrap();
            assert!(err < 1e-5, "max-path {states}x{rows}: {err}");
        }
    }

    proptest! {
        #[test]
        fn successor_distributions_sum_to_one(
            states in 1usize..=5, rows in 1usize..=6, source_len in 1usize..=9,
            lower in -2i64..=4, seed in 0u64..10_000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (_, c, grid) = random_instance(&mut rng, states, rows, source_len, lower);
            let trans = TransitionTensor::new(&LogConfidence::from_confidences(&c), &grid);
            for i in 0..rows {
                for kp in 0..states {
                    let s: f64 = (0..states).map(|k| trans.get(i, kp, k).exp()).sum();
                    prop_assert!((s - 1.0).abs() < 1e-12, "row {} prev {}: {}", i, kp, s);
                }
            }
        }
    }
}
