use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::Objective;

/// Which earlier states a state may attend to in decoder self-attention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionMode {
    /// Every state of an earlier token whose moment is not later.
    #[default]
    Multiple,
    /// Per earlier token, only its latest-moment state that is not later.
    Max,
    /// Per earlier token, only the state actually selected for it.
    Selected,
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiple" => Ok(Self::Multiple),
            "max" => Ok(Self::Max),
            "selected" => Ok(Self::Selected),
            other => Err(Error::contract(format!("unknown attention mode {other:?}"))),
        }
    }
}

/// Architecture, loss weights and decoding settings of the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmtConfig {
    /// Lower-boundary wait `L`; may be `-1`.
    pub lower: i64,
    /// States per target token `K`.
    pub states: usize,
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub latency_weight: f64,
    pub state_weight: f64,
    pub label_smoothing: f64,
    pub attention: AttentionMode,
    pub objective: Objective,
    /// WRITE threshold on confidences.
    pub delta: f64,
    /// Hard cap on emitted tokens; defaults to `2 J + 10`.
    pub max_target_len: Option<usize>,
}

impl Default for HmtConfig {
    fn default() -> Self {
        Self {
            lower: 2,
            states: 4,
            layers: 2,
            model_dim: 64,
            heads: 2,
            ffn_dim: 128,
            dropout: 0.3,
            latency_weight: 1.0,
            state_weight: 1.0,
            label_smoothing: 0.1,
            attention: AttentionMode::Multiple,
            objective: Objective::Marginal,
            delta: 0.5,
            max_target_len: None,
        }
    }
}

impl HmtConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("{field}: {why}")));
        if self.states == 0 {
            return bad("states", "must be at least 1");
        }
        if self.layers == 0 {
            return bad("layers", "must be at least 1");
        }
        if self.model_dim == 0 {
            return bad("model_dim", "must be positive");
        }
        if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return bad("heads", "must be positive and divide model_dim");
        }
        if self.ffn_dim == 0 {
            return bad("ffn_dim", "must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must lie in [0, 1)");
        }
        if !(self.latency_weight >= 0.0 && self.latency_weight.is_finite()) {
            return bad("latency_weight", "must be finite and non-negative");
        }
        if !(self.state_weight >= 0.0 && self.state_weight.is_finite()) {
            return bad("state_weight", "must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing", "must lie in [0, 1)");
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad("delta", "must lie in (0, 1]");
        }
        if self.max_target_len == Some(0) {
            return bad("max_target_len", "must be positive");
        }
        Ok(())
    }

    /// Wait of the upper boundary, `L + K - 1`.
    pub fn upper(&self) -> i64 {
        self.lower + self.states as i64 - 1
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn target_cap(&self, source_len: usize) -> usize {
        self.max_target_len.unwrap_or(2 * source_len + 10)
    }
}
