use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Action {
    Read,
    Write,
}

/// One READ or WRITE. `i` is the zero-based target index being worked on,
/// `j` the number of source tokens received after the action; WRITE events
/// carry the selected state and its confidence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub action: Action,
    pub i: usize,
    pub j: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

/// A state the policy evaluated: its confidence and whether its argmax
/// token equals the token that was written (the gold token when
/// force-decoding).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub i: usize,
    pub k: usize,
    pub moment: usize,
    pub confidence: f64,
    pub correct: bool,
    pub selected: bool,
}

/// Everything a streaming session decided.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub events: Vec<Event>,
    /// Source tokens received when each target token was written.
    pub g: Vec<usize>,
    /// Selected state per target token.
    pub states: Vec<usize>,
    /// Confidence of each selected state.
    pub confidences: Vec<f64>,
    pub judgments: Vec<Judgment>,
    /// `ln p(z)` of the realized selections.
    pub log_path_prob: f64,
    /// Source tokens received in total (including eos once the source ended).
    pub source_len: usize,
}

impl DecisionTrace {
    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    /// `p(z)^(1/|z|)`.
    pub fn path_probability(&self) -> f64 {
        if self.g.is_empty() {
            return 1.0;
        }
        (self.log_path_prob / self.g.len() as f64).exp()
    }

    /// Replays the event list into a `g` schedule.
    pub fn replay(events: &[Event]) -> Result<Vec<usize>> {
        let mut j = 0;
        let mut g = Vec::new();
        for (n, e) in events.iter().enumerate() {
            match e.action {
                Action::Read => {
                    if e.j != j + 1 {
                        return Err(Error::data(format!("event {n}: READ moves j from {j} to {}", e.j)));
                    }
                    j = e.j;
                }
                Action::Write => {
                    if e.j != j || e.i != g.len() {
                        return Err(Error::data(format!(
                            "event {n}: WRITE of token {} at j={} but expected token {} at j={j}",
                            e.i,
                            e.j,
                            g.len()
                        )));
                    }
                    g.push(j);
                }
            }
        }
        Ok(g)
    }

    /// Checks that the events reproduce `g`, that `g` is nondecreasing and
    /// that the per-token fields agree in length.
    pub fn validate(&self) -> Result<()> {
        let g = Self::replay(&self.events)?;
        if g != self.g {
            return Err(Error::data(format!(
                "events replay to g = {g:?}, trace records {:?}",
                self.g
            )));
        }
        if self.g.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::data("g decreases"));
        }
        if self.states.len() != self.g.len() || self.confidences.len() != self.g.len() {
            return Err(Error::data("per-token fields disagree in length"));
        }
        if self.g.iter().any(|&x| x == 0 || x > self.source_len) {
            return Err(Error::data("g outside [1, J]"));
        }
        Ok(())
    }

    /// `(confidence, correct)` for every judged state.
    pub fn confidence_pairs(&self) -> impl Iterator<Item = (f64, bool)> + '_ {
        self.judgments.iter().map(|j| (j.confidence, j.correct))
    }

    /// Fraction of written tokens whose selected state's argmax was right.
    pub fn token_accuracy(&self) -> f64 {
        let sel: Vec<&Judgment> = self.judgments.iter().filter(|j| j.selected).collect();
        if sel.is_empty() {
            return 0.0;
        }
        sel.iter().filter(|j| j.correct).count() as f64 / sel.len() as f64
    }
}
