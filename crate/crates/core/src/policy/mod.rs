//! Streaming READ/WRITE inference over a trained model.

mod scorer;
mod trace;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{BOS, EOS};
use crate::error::{Error, Result};
use crate::hmm::SelectionPath;
use crate::model::{moment, AttentionMode, ConfidenceMatrix, HmtConfig, LogConfidence, MomentGrid};

pub use scorer::{HmtScorer, RowScores, Snapshot, StateScorer};
pub use trace::{Action, DecisionTrace, Event, Judgment};

/// Pull-based source stream. `Ok(None)` (or an eos id) is the end marker.
pub trait SourceProvider {
    fn next_token(&mut self) -> Result<Option<usize>>;
}

impl<I: Iterator<Item = Result<usize>>> SourceProvider for I {
    fn next_token(&mut self) -> Result<Option<usize>> {
        self.next().transpose()
    }
}

/// Provider over a fully known sentence of content ids.
pub fn source_from_ids(ids: &[usize]) -> impl SourceProvider + '_ {
    ids.iter().map(|&x| Ok(x))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyMode {
    #[default]
    Adaptive,
    /// Always select the last state.
    WaitK,
    /// Write the gold token at every decision.
    ForceDecode,
}

impl std::str::FromStr for PolicyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(Self::Adaptive),
            "wait-k" | "force-last-state" => Ok(Self::WaitK),
            "force-decode" => Ok(Self::ForceDecode),
            other => Err(Error::contract(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyConfig {
    /// WRITE threshold on `c[i][k]`.
    pub delta: f64,
    pub attention: AttentionMode,
    /// Fixed cap on written tokens; `None` uses `2 |x| + 10`.
    pub max_target_len: Option<usize>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            delta: 0.5,
            attention: AttentionMode::Multiple,
            max_target_len: None,
        }
    }
}

impl PolicyConfig {
    pub fn from_model(config: &HmtConfig) -> Self {
        Self {
            delta: config.delta,
            attention: config.attention,
            max_target_len: config.max_target_len,
        }
    }

    fn cap(&self, received: usize) -> usize {
        self.max_target_len.unwrap_or(2 * received + 10)
    }
}

/// Result of a completed session.
#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    /// Written content ids; a final eos is not included.
    pub target: Vec<usize>,
    pub trace: DecisionTrace,
}

/// A session that stopped on an error, with what it decided before.
#[derive(Debug)]
pub struct SessionFailure {
    pub error: Error,
    pub partial: Box<DecisionTrace>,
}

impl fmt::Display for SessionFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} after {} written tokens", self.error, self.partial.len())
    }
}

impl std::error::Error for SessionFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<SessionFailure> for Error {
    fn from(f: SessionFailure) -> Self {
        f.error
    }
}

enum Mode {
    Adaptive,
    ForceLastState,
    ForceDecode(Vec<usize>),
}

/// One sentence of streaming inference. Single-threaded; run many sessions
/// over one frozen model to parallelize.
pub struct StreamingSession<'s, S: StateScorer, P: SourceProvider> {
    scorer: &'s mut S,
    provider: P,
    config: PolicyConfig,
    mode: Mode,
    received: Vec<usize>,
    finished: bool,
    emitted: Vec<usize>,
    trace: DecisionTrace,
    cached: Option<(usize, RowScores)>,
}

impl<'s, S: StateScorer, P: SourceProvider> StreamingSession<'s, S, P> {
    fn new(scorer: &'s mut S, provider: P, config: PolicyConfig, mode: Mode) -> Self {
        Self {
            scorer,
            provider,
            config,
            mode,
            received: Vec::new(),
            finished: false,
            emitted: vec![BOS],
            trace: DecisionTrace::default(),
            cached: None,
        }
    }

    /// Source ids received so far (`x̂`, eos included once the source ended).
    pub fn received(&self) -> &[usize] {
        &self.received
    }

    /// Target inputs so far (`ŷ`, bos first).
    pub fn emitted(&self) -> &[usize] {
        &self.emitted
    }

    pub fn trace(&self) -> &DecisionTrace {
        &self.trace
    }

    fn row(&self) -> usize {
        self.emitted.len() - 1
    }

    fn known_len(&self) -> Option<usize> {
        self.finished.then_some(self.received.len())
    }

    fn read(&mut self) -> Result<()> {
        match self.provider.next_token()? {
            Some(t) if t != EOS => self.received.push(t),
            _ => {
                self.received.push(EOS);
                self.finished = true;
            }
        }
        self.trace.events.push(Event {
            action: Action::Read,
            i: self.row(),
            j: self.received.len(),
            k: None,
            confidence: None,
        });
        self.trace.source_len = self.received.len();
        self.cached = None;
        Ok(())
    }

    fn scores(&mut self) -> Result<RowScores> {
        if let Some((n, s)) = &self.cached {
            if *n == self.received.len() {
                return Ok(s.clone());
            }
        }
        let rows = self.emitted.len();
        let grid = MomentGrid::streaming(self.scorer.lower(), self.scorer.states(), rows, self.known_len());
        let s = self.scorer.score_row(
            &self.received,
            &self.emitted,
            &grid,
            self.config.attention,
            &self.trace.states,
        )?;
        self.cached = Some((self.received.len(), s.clone()));
        Ok(s)
    }

    /// Judges the states of the current row and writes one token.
    fn decide(&mut self) -> Result<usize> {
        let i = self.row();
        let states = self.scorer.states();
        let lower = self.scorer.lower();
        let first = match self.mode {
            Mode::ForceLastState => states - 1,
            _ => 0,
        };
        for k in first..states {
            let mut t = moment(lower, i, k, self.known_len());
            if t < self.received.len() {
                continue;
            }
            while self.received.len() < t && !self.finished {
                self.read()?;
                t = moment(lower, i, k, self.known_len());
            }
            let scores = self.scores()?;
            let last = k + 1 == states;
            let c = if last { 1.0 } else { scores.confidences[k] };
            let token = match &self.mode {
                Mode::ForceDecode(gold) => gold[i],
                _ => scores.argmax[k],
            };
            let select = last || c >= self.config.delta;
            self.trace.judgments.push(Judgment {
                i,
                k,
                moment: t,
                confidence: c,
                correct: scores.argmax[k] == token,
                selected: select,
            });
            if !select {
                self.trace.log_path_prob += (1.0 - c).ln();
                continue;
            }
            self.trace.log_path_prob += c.ln();
            self.trace.events.push(Event {
                action: Action::Write,
                i,
                j: self.received.len(),
                k: Some(k),
                confidence: Some(c),
            });
            self.trace.g.push(self.received.len());
            self.trace.states.push(k);
            self.trace.confidences.push(c);
            self.emitted.push(token);
            self.cached = None;
            return Ok(token);
        }
        Err(Error::contract("no state selected; the last state must always write"))
    }

    fn run_inner(&mut self) -> Result<()> {
        if self.scorer.states() == 0 {
            return Err(Error::contract("model has no states"));
        }
        loop {
            let limit = match &self.mode {
                Mode::ForceDecode(gold) => gold.len(),
                _ => self.config.cap(self.received.len()),
            };
            if self.row() >= limit {
                return Ok(());
            }
            if self.decide()? == EOS {
                return Ok(());
            }
        }
    }

    /// Runs to eos, the length cap or the end of the gold target.
    pub fn run(mut self) -> std::result::Result<Translation, SessionFailure> {
        match self.run_inner() {
            Ok(()) => {
                let mut target = self.emitted[1..].to_vec();
                if target.last() == Some(&EOS) {
                    target.pop();
                }
                Ok(Translation {
                    target,
                    trace: self.trace,
                })
            }
            Err(error) => Err(SessionFailure {
                error,
                partial: Box::new(self.trace),
            }),
        }
    }
}

/// Adaptive streaming translation.
pub fn translate_streaming<S: StateScorer, P: SourceProvider>(
    scorer: &mut S,
    provider: P,
    config: &PolicyConfig,
) -> std::result::Result<Translation, SessionFailure> {
    StreamingSession::new(scorer, provider, config.clone(), Mode::Adaptive).run()
}

/// Runs the adaptive decision procedure but writes the gold tokens
/// (`gold` holds content ids; eos is appended).
pub fn force_decode<S: StateScorer>(
    scorer: &mut S,
    source: &[usize],
    gold: &[usize],
    config: &PolicyConfig,
) -> Result<DecisionTrace> {
    let gold: Vec<usize> = gold.iter().copied().chain([EOS]).collect();
    let s = StreamingSession::new(scorer, source_from_ids(source), config.clone(), Mode::ForceDecode(gold));
    Ok(s.run()?.trace)
}

/// Always selects the last state, giving a wait-`(L + K - 1)` schedule.
pub fn wait_k_inference<S: StateScorer>(
    scorer: &mut S,
    source: &[usize],
    config: &PolicyConfig,
) -> Result<Translation> {
    Ok(StreamingSession::new(scorer, source_from_ids(source), config.clone(), Mode::ForceLastState).run()?)
}

/// Dispatches on [`PolicyMode`]; `gold` is required for force-decoding.
pub fn run_mode<S: StateScorer>(
    scorer: &mut S,
    mode: PolicyMode,
    source: &[usize],
    gold: Option<&[usize]>,
    config: &PolicyConfig,
) -> Result<Translation> {
    match mode {
        PolicyMode::Adaptive => Ok(translate_streaming(scorer, source_from_ids(source), config)?),
        PolicyMode::WaitK => wait_k_inference(scorer, source, config),
        PolicyMode::ForceDecode => {
            let gold = gold.ok_or_else(|| Error::contract("force-decoding needs a reference target"))?;
            let trace = force_decode(scorer, source, gold, config)?;
            Ok(Translation {
                target: gold.to_vec(),
                trace,
            })
        }
    }
}

/// `p(z)^(1/|z|)` of selections `path` under confidences `c` on `grid`.
pub fn path_probability(c: &ConfidenceMatrix, grid: &MomentGrid, path: &[usize]) -> f64 {
    if path.is_empty() {
        return 1.0;
    }
    let log_p = SelectionPath(path.to_vec()).log_prior(&LogConfidence::from_confidences(c), grid);
    (log_p / path.len() as f64).exp()
}
