//! Forward-algorithm marginalization over selection paths, in log space.

use super::transition::TransitionTensor;
use crate::error::{Error, Result};
use crate::model::MomentGrid;
use crate::numerics::logsumexp_slice;

/// `ln alpha_i(k) = ln p(y_{<=i}, z_i = k | x)` for every row.
#[derive(Clone, Debug)]
pub struct ForwardTable {
    rows: usize,
    states: usize,
    log_alpha: Vec<f64>,
}

impl ForwardTable {
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.log_alpha[i * self.states + k]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn states(&self) -> usize {
        self.states
    }

    /// `ln sum_k alpha_I(k)`.
    pub fn log_likelihood(&self) -> f64 {
        logsumexp_slice(&self.log_alpha[(self.rows - 1) * self.states..])
    }
}

fn check_shapes(emissions: &[f64], trans: &TransitionTensor) -> Result<()> {
    if trans.rows() == 0 {
        return Err(Error::contract("selection dynamic program over zero target rows"));
    }
    if emissions.len() != trans.rows() * trans.states() {
        return Err(Error::contract(format!(
            "emission table has {} entries, transitions expect {} x {}",
            emissions.len(),
            trans.rows(),
            trans.states()
        )));
    }
    Ok(())
}

/// Initialization, recursion and termination of the forward algorithm.
/// `emissions[i*K + k] = ln p(y_i | x_{<=t_ik}, y_{<i}, z_i = k)`.
pub fn forward_table(emissions: &[f64], trans: &TransitionTensor) -> Result<ForwardTable> {
    check_shapes(emissions, trans)?;
    let (rows, states) = (trans.rows(), trans.states());
    let mut log_alpha = vec![f64::NEG_INFINITY; rows * states];
    for k in 0..states {
        log_alpha[k] = trans.get(0, 0, k) + emissions[k];
    }
    let mut terms = vec![0.0; states];
    for i in 1..rows {
        for k in 0..states {
            for (kp, term) in terms.iter_mut().enumerate() {
                *term = log_alpha[(i - 1) * states + kp] + trans.get(i, kp, k);
            }
            log_alpha[i * states + k] = logsumexp_slice(&terms) + emissions[i * states + k];
        }
    }
    Ok(ForwardTable {
        rows,
        states,
        log_alpha,
    })
}

/// `ln p(y | x)` marginalized over every selection path.
pub fn forward_marginal(emissions: &[f64], trans: &TransitionTensor) -> Result<f64> {
    let ll = forward_table(emissions, trans)?.log_likelihood();
    if ll == f64::NEG_INFINITY {
        return Err(Error::NoFeasiblePath);
    }
    Ok(ll)
}

/// Marginal log-likelihood together with its gradients.
#[derive(Clone, Debug)]
pub struct MarginalGrad {
    pub log_likelihood: f64,
    /// `d ln p(y|x) / d emissions`, the state posteriors (`rows x K`).
    pub emissions: Vec<f64>,
    /// `d ln p(y|x) / d ln transition` (`rows x K x K`), the transition
    /// posteriors; row 0 uses only the `k' = 0` slice.
    pub transitions: Vec<f64>,
}

/// Forward-backward pass.
pub fn marginal_with_grad(emissions: &[f64], trans: &TransitionTensor) -> Result<MarginalGrad> {
    let fwd = forward_table(emissions, trans)?;
    let log_z = fwd.log_likelihood();
    if log_z == f64::NEG_INFINITY {
        return Err(Error::NoFeasiblePath);
    }
    let (rows, states) = (trans.rows(), trans.states());
    // ln beta_i(k) = ln p(y_{>i} | z_i = k, ...)
    let mut log_beta = vec![0.0; rows * states];
    let mut terms = vec![0.0; states];
    for i in (0..rows - 1).rev() {
        for kp in 0..states {
            for (k, term) in terms.iter_mut().enumerate() {
                *term = trans.get(i + 1, kp, k) + emissions[(i + 1) * states + k] + log_beta[(i + 1) * states + k];
            }
            log_beta[i * states + kp] = logsumexp_slice(&terms);
        }
    }
    let mut d_emission = vec![0.0; rows * states];
    for (idx, d) in d_emission.iter_mut().enumerate() {
        let v = fwd.log_alpha[idx] + log_beta[idx] - log_z;
        *d = if v == f64::NEG_INFINITY { 0.0 } else { v.exp() };
    }
    let mut d_trans = vec![0.0; rows * states * states];
    d_trans[..states].copy_from_slice(&d_emission[..states]);
    for i in 1..rows {
        for kp in 0..states {
            let a = fwd.log_alpha[(i - 1) * states + kp];
            if a == f64::NEG_INFINITY {
                continue;
            }
            for k in 0..states {
                let t = trans.get(i, kp, k);
                if t == f64::NEG_INFINITY {
                    continue;
                }
                let v = a + t + emissions[i * states + k] + log_beta[i * states + k] - log_z;
                d_trans[(i * states + kp) * states + k] = v.exp();
            }
        }
    }
    Ok(MarginalGrad {
        log_likelihood: log_z,
        emissions: d_emission,
        transitions: d_trans,
    })
}

/// Most probable path: `(max_z ln [p(y|x,z) p(z)], argmax path)`.
pub fn viterbi(emissions: &[f64], trans: &TransitionTensor) -> Result<(f64, Vec<usize>)> {
    check_shapes(emissions, trans)?;
    let (rows, states) = (trans.rows(), trans.states());
    let mut score = vec![f64::NEG_INFINITY; rows * states];
    let mut back = vec![0usize; rows * states];
    for k in 0..states {
        score[k] = trans.get(0, 0, k) + emissions[k];
    }
    for i in 1..rows {
        for k in 0..states {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for kp in 0..states {
                let v = score[(i - 1) * states + kp] + trans.get(i, kp, k);
                if v > best {
                    best = v;
                    arg = kp;
                }
            }
            score[i * states + k] = best + emissions[i * states + k];
            back[i * states + k] = arg;
        }
    }
    let last = &score[(rows - 1) * states..];
    let (mut k, best) =
        last.iter().copied().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (k, v)| if v > acc.1 { (k, v) } else { acc },
        );
    if best == f64::NEG_INFINITY {
        return Err(Error::NoFeasiblePath);
    }
    let mut path = vec![0; rows];
    for i in (0..rows).rev() {
        path[i] = k;
        if i > 0 {
            k = back[i * states + k];
        }
    }
    Ok((best, path))
}

/// Expected latency relative to the lower boundary,
/// `E_z[(1/I) sum_i (t_{i,z_i} - t_{i,1})]`, with its gradient with respect
/// to the log transition entries.
pub fn expected_latency_with_grad(trans: &TransitionTensor, grid: &MomentGrid) -> (f64, Vec<f64>) {
    let (rows, states) = (trans.rows(), trans.states());
    let inv_rows = 1.0 / rows as f64;
    let cost = |i: usize, k: usize| (grid.get(i, k) - grid.get(i, 0)) as f64 * inv_rows;
    let prob = |i: usize, kp: usize, k: usize| {
        let lp = trans.get(i, kp, k);
        if lp == f64::NEG_INFINITY {
            0.0
        } else {
            lp.exp()
        }
    };

    // q_i(k) = p(z_i = k)
    let mut q = vec![0.0; rows * states];
    for (k, q0) in q[..states].iter_mut().enumerate() {
        *q0 = prob(0, 0, k);
    }
    for i in 1..rows {
        for kp in 0..states {
            let qp = q[(i - 1) * states + kp];
            if qp == 0.0 {
                continue;
            }
            for k in 0..states {
                q[i * states + k] += qp * prob(i, kp, k);
            }
        }
    }
    let mut value = 0.0;
    for i in 0..rows {
        for k in 0..states {
            value += q[i * states + k] * cost(i, k);
        }
    }

    // b_i(k) = d value / d q_i(k)
    let mut b = vec![0.0; rows * states];
    for k in 0..states {
        b[(rows - 1) * states + k] = cost(rows - 1, k);
    }
    for i in (0..rows - 1).rev() {
        for kp in 0..states {
            let mut acc = cost(i, kp);
            for k in 0..states {
                acc += prob(i + 1, kp, k) * b[(i + 1) * states + k];
            }
            b[i * states + kp] = acc;
        }
    }
    let mut grad = vec![0.0; rows * states * states];
    for k in 0..states {
        grad[k] = prob(0, 0, k) * b[k];
    }
    for i in 1..rows {
        for kp in 0..states {
            let qp = q[(i - 1) * states + kp];
            for k in 0..states {
                grad[(i * states + kp) * states + k] = qp * prob(i, kp, k) * b[i * states + k];
            }
        }
    }
    (value, grad)
}

pub fn expected_latency(trans: &TransitionTensor, grid: &MomentGrid) -> f64 {
    expected_latency_with_grad(trans, grid).0
}
