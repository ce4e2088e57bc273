use crate::error::Result;
use crate::model::{AttentionMode, ConfidenceMatrix, Dropout, Hmt, MomentGrid};
use crate::numerics::{Array, Tape};

/// Confidences and greedy tokens of every state of one target row.
#[derive(Clone, Debug, PartialEq)]
pub struct RowScores {
    /// `c[i][k]`; the last entry is exactly 1.
    pub confidences: Vec<f64>,
    pub argmax: Vec<usize>,
}

/// What the streaming policy needs from a model: the scores of the last
/// target row given the source prefix and the bos-prefixed target so far.
pub trait StateScorer {
    fn lower(&self) -> i64;
    fn states(&self) -> usize;
    /// `grid` has one row per entry of `target_in`; `path` holds the states
    /// selected for the earlier rows.
    fn score_row(
        &mut self,
        source: &[usize],
        target_in: &[usize],
        grid: &MomentGrid,
        attention: AttentionMode,
        path: &[usize],
    ) -> Result<RowScores>;
}

/// Values computed for one row during streaming, kept for inspection.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub row: usize,
    pub received: usize,
    /// Encoder states of the received prefix, `received x d`.
    pub encoder: Array,
    /// Representations of the row's states, `K x d`.
    pub states: Array,
    /// `K x V`.
    pub emission_logits: Array,
    pub confidence_logits: Vec<f64>,
}

/// [`StateScorer`] backed by a trained [`Hmt`] with dropout off.
pub struct HmtScorer<'m> {
    model: &'m Hmt,
    snapshots: Option<Vec<Snapshot>>,
}

impl<'m> HmtScorer<'m> {
    pub fn new(model: &'m Hmt) -> Self {
        Self { model, snapshots: None }
    }

    /// Keeps a [`Snapshot`] of every scored row.
    pub fn recording(model: &'m Hmt) -> Self {
        Self {
            model,
            snapshots: Some(Vec::new()),
        }
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        self.snapshots.as_deref().unwrap_or(&[])
    }
}

fn rows_of(a: &Array, first: usize, count: usize) -> Array {
    let cols = a.cols();
    Array::from_fn(count, cols, |r, c| a.get(first + r, c))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (n, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = n;
        }
    }
    best
}

impl StateScorer for HmtScorer<'_> {
    fn lower(&self) -> i64 {
        self.model.config().lower
    }

    fn states(&self) -> usize {
        self.model.config().states
    }

    fn score_row(
        &mut self,
        source: &[usize],
        target_in: &[usize],
        grid: &MomentGrid,
        attention: AttentionMode,
        path: &[usize],
    ) -> Result<RowScores> {
        let k = self.states();
        let row = target_in.len() - 1;
        let mut tape = Tape::new();
        let p = self.model.bind(&mut tape, false);
        let path = (attention == AttentionMode::Selected).then_some(path);
        let fwd = self.model.forward(
            &mut tape,
            &p,
            source,
            target_in,
            grid,
            attention,
            path,
            &mut Dropout::off(),
        )?;
        let logits = tape.value(fwd.emission_logits);
        let emission = rows_of(logits, row * k, k);
        let conf_logits = tape.value(fwd.confidence_logits).row_slice(row).to_vec();
        let confidences = ConfidenceMatrix::from_logits(1, k, &conf_logits).row(0).to_vec();
        let argmax = (0..k).map(|s| argmax(emission.row_slice(s))).collect();
        if let Some(log) = self.snapshots.as_mut() {
            log.push(Snapshot {
                row,
                received: source.len(),
                encoder: tape.value(fwd.encoder).clone(),
                states: rows_of(tape.value(fwd.states), row * k, k),
                emission_logits: emission,
                confidence_logits: conf_logits,
            });
        }
        Ok(RowScores { confidences, argmax })
    }
}
