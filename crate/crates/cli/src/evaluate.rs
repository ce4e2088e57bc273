use std::path::Path;

use serde::Serialize;

use hmt_core::data::load_lines;
use hmt_core::metrics::{aligned_proportion, corpus_bleu, parse_pharaoh, tokenize, LatencyReport};

use crate::error::{CliError, CliResult};
use crate::trace_file::{read_traces, TraceRecord};

#[derive(Clone, Debug, Serialize)]
pub struct Evaluation {
    pub sentences: usize,
    pub bleu: f64,
    #[serde(flatten)]
    pub latency: LatencyReport,
    /// Present when alignments were given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aligned_proportion: Option<f64>,
}

pub(crate) fn read_references(path: &Path, expected: usize) -> CliResult<Vec<Vec<String>>> {
    let refs: Vec<Vec<String>> = load_lines(path)?.iter().map(|l| tokenize(l)).collect();
    if refs.len() != expected {
        return Err(CliError::new(
            "data",
            format!("{expected} traces but {} lines in {}", refs.len(), path.display()),
        ));
    }
    Ok(refs)
}

/// Corpus BLEU and mean sentence latency over the full write schedule.
pub fn evaluate_records(
    records: &[TraceRecord],
    references: &[Vec<String>],
    alignments: Option<&[String]>,
) -> CliResult<Evaluation> {
    if records.is_empty() {
        return Err(CliError::new("data", "no trace records"));
    }
    let hyps: Vec<Vec<String>> = records.iter().map(|r| r.hypothesis.clone()).collect();
    let bleu = corpus_bleu(&hyps, references)?;
    let reports = records
        .iter()
        .map(|r| LatencyReport::new(&r.g, r.source_len))
        .collect::<Result<Vec<_>, _>>()?;
    let latency = LatencyReport::mean(&reports).expect("non-empty");
    let aligned = match alignments {
        None => None,
        Some(lines) => {
            let mut sum = 0.0;
            for (n, (r, line)) in records.iter().zip(lines).enumerate() {
                let at = |m: String| CliError::new("data", format!("sentence {}: {m}", n + 1));
                if r.hypothesis.len() != references[n].len() {
                    return Err(at(format!(
                        "aligned proportion needs force-decoded traces; hypothesis has {} tokens, reference {}",
                        r.hypothesis.len(),
                        references[n].len()
                    )));
                }
                let a = parse_pharaoh(line, r.hypothesis.len(), r.source.len()).map_err(|e| at(e.to_string()))?;
                sum += aligned_proportion(r.content_schedule(), &a).map_err(|e| at(e.to_string()))?;
            }
            Some(sum / records.len() as f64)
        }
    };
    Ok(Evaluation {
        sentences: records.len(),
        bleu,
        latency,
        aligned_proportion: aligned,
    })
}

pub fn run(traces: &Path, reference: &Path, alignments: Option<&Path>) -> CliResult<Evaluation> {
    let records = read_traces(traces)?;
    let refs = read_references(reference, records.len())?;
    let align_lines = match alignments {
        Some(p) => {
            let text = crate::error::io_at(p, std::fs::read_to_string(p))?;
            let lines: Vec<String> = text.lines().map(str::to_owned).collect();
            if lines.len() != records.len() {
                return Err(CliError::new(
                    "data",
                    format!("{} traces but {} lines in {}", records.len(), lines.len(), p.display()),
                ));
            }
            Some(lines)
        }
        None => None,
    };
    evaluate_records(&records, &refs, align_lines.as_deref())
}
