use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hmt_core::metrics::{bleu_by_path_probability, confidence_accuracy_bins, ScoredSentence, PROBABILITY_BINS};

use crate::error::{io_at, CliError, CliResult};
use crate::evaluate::read_references;
use crate::trace_file::read_traces;

pub const CONFIDENCE_TABLE: &str = "confidence_accuracy.tsv";
pub const PROBABILITY_TABLE: &str = "path_probability_bleu.tsv";

pub struct AnalysisFiles {
    /// `None` when no trace carried force-decode judgments.
    pub confidence: Option<PathBuf>,
    pub probability: PathBuf,
}

fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), |v| format!("{v:.4}"))
}

/// Each trace file pairs with the reference file at the same position.
pub fn run(traces: &[PathBuf], references: &[PathBuf], out: &Path, bins: Option<usize>) -> CliResult<AnalysisFiles> {
    if traces.is_empty() {
        return Err(CliError::usage("analyze needs at least one --traces file"));
    }
    if references.len() != traces.len() {
        return Err(CliError::usage(format!(
            "{} --traces files but {} --reference files",
            traces.len(),
            references.len()
        )));
    }
    let mut sentences = Vec::new();
    let mut judged = Vec::new();
    for (t, r) in traces.iter().zip(references) {
        let records = read_traces(t)?;
        let refs = read_references(r, records.len())?;
        for (rec, reference) in records.into_iter().zip(refs) {
            if let Some(j) = &rec.judgments {
                judged.extend(j.iter().map(|j| (j.confidence, j.correct)));
            }
            sentences.push(ScoredSentence {
                probability: rec.path_probability,
                hypothesis: rec.hypothesis,
                reference,
            });
        }
    }
    if sentences.is_empty() {
        return Err(CliError::new("data", "no trace records to analyze"));
    }
    io_at(out, fs::create_dir_all(out))?;

    let confidence = if judged.is_empty() {
        None
    } else {
        let mut text = String::from("lower\tupper\tcount\taccuracy\n");
        for b in confidence_accuracy_bins(judged) {
            writeln!(
                text,
                "{:.1}\t{:.1}\t{}\t{}",
                b.lower,
                b.upper,
                b.count,
                cell(b.accuracy)
            )
            .expect("string write");
        }
        let path = out.join(CONFIDENCE_TABLE);
        io_at(&path, fs::write(&path, text))?;
        Some(path)
    };

    let mut text = String::from("lower\tupper\tcount\tbleu\n");
    for b in bleu_by_path_probability(&sentences, bins.unwrap_or(PROBABILITY_BINS))? {
        writeln!(text, "{:.4}\t{:.4}\t{}\t{}", b.lower, b.upper, b.count, cell(b.bleu)).expect("string write");
    }
    let probability = out.join(PROBABILITY_TABLE);
    io_at(&probability, fs::write(&probability, text))?;
    Ok(AnalysisFiles {
        confidence,
        probability,
    })
}
