use serde::{Deserialize, Serialize};

use super::ops::{expected_latency_var, marginal_log_likelihood, max_path_log_likelihood};
use crate::error::Result;
use crate::model::MomentGrid;
use crate::numerics::{Tape, Var};

/// How the translation likelihood treats the hidden selection path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Marginalize over every path with the forward algorithm.
    #[default]
    Marginal,
    /// Train on the single most probable path only.
    MaxSelection,
}

/// Scalar values of the loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub hmm: f64,
    pub latency: f64,
    pub state: f64,
    pub total: f64,
}

impl LossTerms {
    /// Elementwise mean over sentences.
    pub fn mean(terms: &[LossTerms]) -> LossTerms {
        let n = terms.len().max(1) as f64;
        let mut out = LossTerms::default();
        for t in terms {
            out.hmm += t.hmm / n;
            out.latency += t.latency / n;
            out.state += t.state / n;
            out.total += t.total / n;
        }
        out
    }
}

/// Tape nodes of one sentence's loss.
#[derive(Clone, Copy, Debug)]
pub struct SentenceLoss {
    pub total: Var,
    pub hmm: Var,
    pub latency: Var,
    pub state: Var,
}

impl SentenceLoss {
    pub fn values(&self, tape: &Tape<'_>) -> LossTerms {
        LossTerms {
            hmm: tape.value(self.hmm).data()[0],
            latency: tape.value(self.latency).data()[0],
            state: tape.value(self.state).data()[0],
            total: tape.value(self.total).data()[0],
        }
    }
}

/// Weights of the auxiliary terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub latency_weight: f64,
    pub state_weight: f64,
    pub objective: Objective,
}

/// `-ln p(y|x) + lambda_latency * E[C(z)] + lambda_state * L_state` for one
/// sentence. `emissions` holds `ln p(y_i | ..., z_i = k)` for every state;
/// `conf_logits` the pre-sigmoid confidences.
pub fn sentence_loss(
    tape: &mut Tape<'_>,
    emissions: Var,
    conf_logits: Var,
    grid: &MomentGrid,
    weights: &BatchLoss,
) -> Result<SentenceLoss> {
    let ll = match weights.objective {
        Objective::Marginal => marginal_log_likelihood(tape, emissions, conf_logits, grid)?,
        Objective::MaxSelection => max_path_log_likelihood(tape, emissions, conf_logits, grid)?,
    };
    let hmm = tape.scale(ll, -1.0);
    let latency = expected_latency_var(tape, conf_logits, grid)?;
    let n = tape.value(emissions).len() as f64;
    let sum_e = tape.sum(emissions);
    let state = tape.scale(sum_e, -1.0 / n);
    let wl = tape.scale(latency, weights.latency_weight);
    let ws = tape.scale(state, weights.state_weight);
    let aux = tape.add(wl, ws)?;
    let total = tape.add(hmm, aux)?;
    Ok(SentenceLoss {
        total,
        hmm,
        latency,
        state,
    })
}

/// Batch objective: the mean of the per-sentence totals.
pub fn total_loss(tape: &mut Tape<'_>, sentences: &[SentenceLoss]) -> Result<Var> {
    let mut acc = sentences[0].total;
    for s in &sentences[1..] {
        acc = tape.add(acc, s.total)?;
    }
    Ok(tape.scale(acc, 1.0 / sentences.len() as f64))
}
