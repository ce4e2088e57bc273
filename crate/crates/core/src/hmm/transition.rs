use crate::model::{LogConfidence, MomentGrid};

/// `ln p(z_i = k | z_{i-1} = k')` for every row, stored `rows x K x K` with the
/// previous state on the middle axis. Row 0 conditions on the implicit start
/// selection (moment 0), so all of its `k'` slices are identical.
#[derive(Clone, Debug)]
pub struct TransitionTensor {
    rows: usize,
    states: usize,
    logp: Vec<f64>,
}

impl TransitionTensor {
    pub fn new(conf: &LogConfidence, grid: &MomentGrid) -> Self {
        let (rows, states) = (grid.rows(), grid.states());
        assert_eq!((conf.rows(), conf.states()), (rows, states), "confidence/grid size");
        let mut logp = vec![f64::NEG_INFINITY; rows * states * states];
        for i in 0..rows {
            for kp in 0..states {
                let prev = if i == 0 { None } else { Some(kp) };
                for k in 0..states {
                    logp[(i * states + kp) * states + k] = transition_logprob(conf, grid, i, prev, k);
                }
            }
        }
        Self { rows, states, logp }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn get(&self, i: usize, prev: usize, k: usize) -> f64 {
        self.logp[(i * self.states + prev) * self.states + k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.logp
    }
}

/// Log transition probability into state `k` of row `i` from `prev_state` of
/// row `i - 1` (`None` for the implicit start before row 0).
///
/// States of row `i` whose moment is not earlier than the previous moment are
/// judged in index order; reaching `k` requires rejecting every judged state
/// before it and accepting `k`. States earlier than the previous moment are
/// unreachable (`-inf`).
pub fn transition_logprob(
    conf: &LogConfidence,
    grid: &MomentGrid,
    i: usize,
    prev_state: Option<usize>,
    k: usize,
) -> f64 {
    let prev = grid.previous_moment(i, prev_state);
    if grid.get(i, k) < prev {
        return f64::NEG_INFINITY;
    }
    let mut lp = conf.log_select(i, k);
    for l in grid.judged(i, prev).take_while(|&l| l < k) {
        lp += conf.log_reject(i, l);
    }
    lp
}

/// Pulls gradients with respect to log transition entries back onto the
/// pre-sigmoid confidence scores (`rows x K`, last column always zero).
///
/// `weights[(i*K + k')*K + k]` is `dL / d ln p(z_i=k | z_{i-1}=k')`; for row 0
/// only the `k' = 0` slice is read.
pub fn transition_logit_vjp(conf: &LogConfidence, grid: &MomentGrid, weights: &[f64]) -> Vec<f64> {
    let (rows, states) = (grid.rows(), grid.states());
    let mut grad = vec![0.0; rows * states];
    for i in 0..rows {
        let prev_slots = if i == 0 { 1 } else { states };
        for kp in 0..prev_slots {
            let prev = grid.previous_moment(i, if i == 0 { None } else { Some(kp) });
            for k in 0..states {
                let w = weights[(i * states + kp) * states + k];
                if w == 0.0 || grid.get(i, k) < prev {
                    continue;
                }
                if k + 1 < states {
                    // d ln sigmoid(a) / da = 1 - c
                    grad[i * states + k] += w * (1.0 - conf.prob(i, k));
                }
                for l in grid.judged(i, prev).take_while(|&l| l < k) {
                    // d ln sigmoid(-a) / da = -c
                    grad[i * states + l] -= w * conf.prob(i, l);
                }
            }
        }
    }
    grad
}
