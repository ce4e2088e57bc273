use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use hmt_core::data::load_lines;
use hmt_core::metrics::tokenize;
use hmt_core::policy::{run_mode, HmtScorer, PolicyConfig, PolicyMode};
use hmt_core::AttentionMode;

use crate::checkpoint::Checkpoint;
use crate::error::{io_at, CliError, CliResult};
use crate::trace_file::{append, TraceRecord};

pub const HYPOTHESES_FILE: &str = "hypotheses.txt";
pub const TRACES_FILE: &str = "traces.jsonl";

#[derive(Clone, Debug, Default)]
pub struct TranslateOptions {
    pub mode: PolicyMode,
    pub delta: Option<f64>,
    pub attention: Option<AttentionMode>,
    pub max_target_len: Option<usize>,
    /// Gold targets, required for force-decoding.
    pub reference: Option<PathBuf>,
}

/// Where results go: a directory with both files, or hypotheses on stdout.
pub enum Sink {
    Directory(PathBuf),
    Stdout,
}

pub fn policy_config(ck: &Checkpoint, opts: &TranslateOptions) -> CliResult<PolicyConfig> {
    let mut cfg = PolicyConfig::from_model(&ck.config.model);
    if let Some(d) = opts.delta {
        if !(d > 0.0 && d <= 1.0) {
            return Err(CliError::usage(format!("--delta {d} must lie in (0, 1]")));
        }
        cfg.delta = d;
    }
    if let Some(a) = opts.attention {
        cfg.attention = a;
    }
    if let Some(n) = opts.max_target_len {
        if n == 0 {
            return Err(CliError::usage("--max-target-len must be positive"));
        }
        cfg.max_target_len = Some(n);
    }
    Ok(cfg)
}

/// Translates every line of `input` (stdin when `None`), one sentence at a
/// time, and returns the number of sentences.
pub fn run(checkpoint: &Path, input: Option<&Path>, opts: &TranslateOptions, sink: Sink) -> CliResult<usize> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = ck.model()?;
    let cfg = policy_config(&ck, opts)?;
    let references = match (&opts.reference, opts.mode) {
        (Some(p), _) => Some(load_lines(p)?),
        (None, PolicyMode::ForceDecode) => return Err(CliError::usage("force-decode needs --reference")),
        (None, _) => None,
    };

    let (mut hyp_out, mut trace_out): (Box<dyn Write>, Option<Box<dyn Write>>) = match &sink {
        Sink::Directory(dir) => {
            io_at(dir, fs::create_dir_all(dir))?;
            let h = dir.join(HYPOTHESES_FILE);
            let t = dir.join(TRACES_FILE);
            (
                Box::new(std::io::BufWriter::new(io_at(&h, fs::File::create(&h))?)),
                Some(Box::new(std::io::BufWriter::new(io_at(&t, fs::File::create(&t))?))),
            )
        }
        Sink::Stdout => (Box::new(std::io::stdout().lock()), None),
    };

    let reader: Box<dyn BufRead> = match input {
        Some(p) => Box::new(std::io::BufReader::new(io_at(p, fs::File::open(p))?)),
        None => Box::new(std::io::stdin().lock()),
    };
    let mut scorer = HmtScorer::new(&model);
    let mut n = 0;
    for line in reader.lines() {
        let line = line?;
        let at = |m: String| CliError::new("data", format!("input line {}: {m}", n + 1));
        if line.trim().is_empty() {
            return Err(at("empty line".into()));
        }
        let source = ck.source_vocab.encode(&line);
        let gold = match &references {
            Some(r) => {
                let text = r
                    .get(n)
                    .ok_or_else(|| at(format!("no reference line (reference has {} lines)", r.len())))?;
                Some(ck.target_vocab.encode(text))
            }
            None => None,
        };
        let out = run_mode(&mut scorer, opts.mode, &source, gold.as_deref(), &cfg).map_err(|e| at(e.to_string()))?;
        let hypothesis = ck.target_vocab.decode(&out.target);
        writeln!(hyp_out, "{hypothesis}")?;
        if let Some(w) = trace_out.as_mut() {
            append(
                w,
                &TraceRecord::new(opts.mode, tokenize(&line), tokenize(&hypothesis), &out.trace),
            )?;
            w.flush()?;
        }
        hyp_out.flush()?;
        n += 1;
    }
    if let Some(r) = &references {
        if r.len() != n {
            return Err(CliError::new(
                "data",
                format!("{n} input sentences but {} reference lines", r.len()),
            ));
        }
    }
    Ok(n)
}
