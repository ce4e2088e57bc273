//! JSON Lines trace files, one record per translated sentence.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use hmt_core::policy::{DecisionTrace, Event, Judgment, PolicyMode};

use crate::error::{io_at, CliError, CliResult};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub schema_version: u32,
    pub mode: PolicyMode,
    /// Source content tokens.
    pub source: Vec<String>,
    /// Source length counting the end-of-sentence token.
    pub source_len: usize,
    /// Source tokens read before the last write.
    pub received: usize,
    /// Emitted content tokens (the end-of-sentence write is not included).
    pub hypothesis: Vec<String>,
    pub events: Vec<Event>,
    /// One-based received-token count at each write, the final end-of-sentence write included.
    pub g: Vec<usize>,
    pub states: Vec<usize>,
    pub confidences: Vec<f64>,
    /// `p(z)` normalized by the number of writes.
    pub path_probability: f64,
    /// Every judged state; written only by force-decode runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judgments: Option<Vec<Judgment>>,
}

impl TraceRecord {
    pub fn new(mode: PolicyMode, source: Vec<String>, hypothesis: Vec<String>, trace: &DecisionTrace) -> Self {
        Self {
            schema_version: TRACE_SCHEMA_VERSION,
            mode,
            source_len: source.len() + 1,
            source,
            received: trace.source_len,
            hypothesis,
            events: trace.events.clone(),
            g: trace.g.clone(),
            states: trace.states.clone(),
            confidences: trace.confidences.clone(),
            path_probability: trace.path_probability(),
            judgments: (mode == PolicyMode::ForceDecode).then(|| trace.judgments.clone()),
        }
    }

    pub fn trace(&self) -> DecisionTrace {
        DecisionTrace {
            events: self.events.clone(),
            g: self.g.clone(),
            states: self.states.clone(),
            confidences: self.confidences.clone(),
            judgments: self.judgments.clone().unwrap_or_default(),
            log_path_prob: self.path_probability.ln() * self.g.len() as f64,
            source_len: self.received,
        }
    }

    /// Schema version, replayed schedule and length bounds.
    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != TRACE_SCHEMA_VERSION {
            return Err(CliError::format(format!(
                "trace schema version {} (this build reads {TRACE_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.source_len != self.source.len() + 1 || self.received > self.source_len {
            return Err(CliError::format(format!(
                "source_len {} / received {} inconsistent with {} source tokens",
                self.source_len,
                self.received,
                self.source.len()
            )));
        }
        self.trace().validate()?;
        if self.g.len() < self.hypothesis.len() {
            return Err(CliError::format(format!(
                "{} writes for {} hypothesis tokens",
                self.g.len(),
                self.hypothesis.len()
            )));
        }
        Ok(())
    }

    /// The lag schedule of the content tokens.
    pub fn content_schedule(&self) -> &[usize] {
        &self.g[..self.hypothesis.len()]
    }
}

pub fn write_traces(path: &Path, records: &[TraceRecord]) -> CliResult<()> {
    let file = io_at(path, std::fs::File::create(path))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        append(&mut w, r)?;
    }
    io_at(path, w.flush())
}

pub fn append(w: &mut impl Write, record: &TraceRecord) -> CliResult<()> {
    let line = serde_json::to_string(record).map_err(|e| CliError::format(e.to_string()))?;
    writeln!(w, "{line}")?;
    Ok(())
}

/// Reads and validates every record.
pub fn read_traces(path: &Path) -> CliResult<Vec<TraceRecord>> {
    let file = io_at(path, std::fs::File::open(path))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = io_at(path, line)?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |m: String| CliError::format(format!("{} line {}: {m}", path.display(), n + 1));
        let r: TraceRecord = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        r.validate().map_err(|e| at(e.message))?;
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use hmt_core::policy::Action;

    use super::*;

    fn record() -> TraceRecord {
        let ev = |action, i, j| Event {
            action,
            i,
            j,
            k: None,
            confidence: None,
        };
        let trace = DecisionTrace {
            events: vec![
                ev(Action::Read, 0, 1),
                ev(Action::Read, 0, 2),
                ev(Action::Write, 0, 2),
                ev(Action::Read, 1, 3),
                ev(Action::Write, 1, 3),
            ],
            g: vec![2, 3],
            states: vec![0, 0],
            confidences: vec![0.9, 1.0],
            judgments: Vec::new(),
            log_path_prob: 0.9f64.ln(),
            source_len: 3,
        };
        TraceRecord::new(
            PolicyMode::Adaptive,
            vec!["a".into(), "b".into()],
            vec!["x".into()],
            &trace,
        )
    }

    #[test]
    fn json_round_trip() {
        let r = record();
        r.validate().unwrap();
        let line = serde_json::to_string(&r).unwrap();
        assert!(!line.contains("judgments"));
        let back: TraceRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.content_schedule(), &[2]);
    }

    #[test]
    fn tampered_schedule_fails() {
        let mut r = record();
        r.g[0] = 1;
        assert!(r.validate().is_err());
        let mut r = record();
        r.schema_version = 2;
        assert!(r.validate().unwrap_err().message.contains("schema"));
    }
}
