use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Checks `1 <= g_i <= J` and that `g` is nondecreasing and nonempty.
pub fn validate_schedule(g: &[usize], source_len: usize) -> Result<()> {
    if g.is_empty() {
        return Err(Error::data("empty lag schedule"));
    }
    if let Some((i, &x)) = g.iter().enumerate().find(|(_, &x)| x == 0 || x > source_len) {
        return Err(Error::data(format!("g[{i}] = {x} outside [1, {source_len}]")));
    }
    if let Some(i) = g.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::data(format!("g decreases after position {i}")));
    }
    Ok(())
}

/// Average source tokens read per positive jump.
pub fn consecutive_wait(g: &[usize], source_len: usize) -> Result<f64> {
    validate_schedule(g, source_len)?;
    let mut prev = 0;
    let (mut total, mut jumps) = (0usize, 0usize);
    for &x in g {
        if x > prev {
            total += x - prev;
            jumps += 1;
        }
        prev = x;
    }
    Ok(total as f64 / jumps as f64)
}

pub fn average_proportion(g: &[usize], source_len: usize) -> Result<f64> {
    validate_schedule(g, source_len)?;
    let sum: usize = g.iter().sum();
    Ok(sum as f64 / (source_len * g.len()) as f64)
}

/// Lag averaged up to the first token written with the full source; if no
/// token was, over all tokens.
pub fn average_lagging(g: &[usize], source_len: usize) -> Result<f64> {
    validate_schedule(g, source_len)?;
    let (j, n) = (source_len as f64, g.len() as f64);
    let tau = g.iter().position(|&x| x == source_len).map_or(g.len(), |p| p + 1);
    let sum: f64 = g[..tau]
        .iter()
        .enumerate()
        .map(|(i, &x)| x as f64 - i as f64 / (n / j))
        .sum();
    Ok(sum / tau as f64)
}

pub fn differentiable_average_lagging(g: &[usize], source_len: usize) -> Result<f64> {
    validate_schedule(g, source_len)?;
    let (j, n) = (source_len as f64, g.len() as f64);
    let mut prev = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for (i, &x) in g.iter().enumerate() {
        let gp = if i == 0 { x as f64 } else { (x as f64).max(prev + j / n) };
        sum += gp - i as f64 / (n / j);
        prev = gp;
    }
    Ok(sum / n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub al: f64,
    pub ap: f64,
    pub cw: f64,
    pub dal: f64,
}

impl LatencyReport {
    pub fn new(g: &[usize], source_len: usize) -> Result<Self> {
        Ok(Self {
            al: average_lagging(g, source_len)?,
            ap: average_proportion(g, source_len)?,
            cw: consecutive_wait(g, source_len)?,
            dal: differentiable_average_lagging(g, source_len)?,
        })
    }

    /// Unweighted sentence mean.
    pub fn mean(reports: &[LatencyReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&LatencyReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(Self {
            al: avg(|r| r.al),
            ap: avg(|r| r.ap),
            cw: avg(|r| r.cw),
            dal: avg(|r| r.dal),
        })
    }
}

/// Fraction of target tokens whose aligned source position had arrived.
pub fn aligned_proportion(g: &[usize], alignments: &[usize]) -> Result<f64> {
    if g.len() != alignments.len() {
        return Err(Error::data(format!(
            "{} lag entries but {} alignments",
            g.len(),
            alignments.len()
        )));
    }
    if g.is_empty() {
        return Err(Error::data("empty lag schedule"));
    }
    let hit = g.iter().zip(alignments).filter(|(g, a)| a <= g).count();
    Ok(hit as f64 / g.len() as f64)
}
