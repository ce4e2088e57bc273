//! Path-enumeration references for the selection dynamic programs.
//!
//! These sum or maximize over all `K^I` selection paths explicitly and compute
//! each transition from the moment-interval product directly, so they share no
//! code with the recursions they check.

use crate::error::{Error, Result};
use crate::model::{ConfidenceMatrix, MomentGrid};

/// Refuse instances with more paths than this.
pub const ORACLE_PATH_LIMIT: u128 = 1_000_000;

/// Probability of moving to state `k` of row `i` when the previous selection
/// started translating at moment `prev`: the product of `1 - c` over states
/// whose `(moment, index)` lies in `[(prev, 0), (t_k, k))` and `c_k`.
fn transition_prob(c: &ConfidenceMatrix, grid: &MomentGrid, i: usize, prev: usize, k: usize) -> f64 {
    let tk = grid.get(i, k);
    if tk < prev {
        return 0.0;
    }
    let mut p = c.get(i, k);
    for l in 0..grid.states() {
        let tl = grid.get(i, l);
        let before = tl < tk || (tl == tk && l < k);
        if tl >= prev && before {
            p *= 1.0 - c.get(i, l);
        }
    }
    p
}

/// Every path with its prior probability `p(z)`.
pub fn enumerate_paths(c: &ConfidenceMatrix, grid: &MomentGrid) -> Result<Vec<(Vec<usize>, f64)>> {
    let (rows, states) = (grid.rows(), grid.states());
    let count = (states as u128).checked_pow(rows as u32).unwrap_or(u128::MAX);
    if count > ORACLE_PATH_LIMIT {
        return Err(Error::OracleTooLarge {
            paths: count,
            limit: ORACLE_PATH_LIMIT,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut path = vec![0usize; rows];
    for mut code in 0..count {
        for slot in path.iter_mut() {
            *slot = (code % states as u128) as usize;
            code /= states as u128;
        }
        let mut p = 1.0;
        let mut prev = 0;
        for (i, &k) in path.iter().enumerate() {
            p *= transition_prob(c, grid, i, prev, k);
            prev = grid.get(i, k);
        }
        out.push((path.clone(), p));
    }
    Ok(out)
}

/// `ln sum_z prod_i p(y_i | z_i) p(z_i | z_{i-1})` by explicit enumeration.
pub fn brute_force_marginal(emissions: &[f64], c: &ConfidenceMatrix, grid: &MomentGrid) -> Result<f64> {
    let states = grid.states();
    let mut total = 0.0;
    for (path, p) in enumerate_paths(c, grid)? {
        let e: f64 = path.iter().enumerate().map(|(i, &k)| emissions[i * states + k]).sum();
        total += p * e.exp();
    }
    Ok(total.ln())
}

/// `max_z ln [p(y|x,z) p(z)]` by explicit enumeration.
pub fn brute_force_max(emissions: &[f64], c: &ConfidenceMatrix, grid: &MomentGrid) -> Result<f64> {
    let states = grid.states();
    let mut best = f64::NEG_INFINITY;
    for (path, p) in enumerate_paths(c, grid)? {
        if p == 0.0 {
            continue;
        }
        let e: f64 = path.iter().enumerate().map(|(i, &k)| emissions[i * states + k]).sum();
        best = best.max(e + p.ln());
    }
    Ok(best)
}

/// `sum_z p(z) C(z)` with `C(z) = (1/I) sum_i (t_{i,z_i} - t_{i,1})`.
pub fn brute_force_latency(c: &ConfidenceMatrix, grid: &MomentGrid) -> Result<f64> {
    let rows = grid.rows();
    let mut total = 0.0;
    for (path, p) in enumerate_paths(c, grid)? {
        let cost: f64 = path
            .iter()
            .enumerate()
            .map(|(i, &k)| (grid.get(i, k) - grid.get(i, 0)) as f64)
            .sum::<f64>()
            / rows as f64;
        total += p * cost;
    }
    Ok(total)
}
