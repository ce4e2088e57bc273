use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use hmt_core::data::{build_vocab, generate_synthetic, load_parallel_lines, synthetic_vocab, SentencePair, Vocabulary};
use hmt_core::train::{Trainer, UpdateLog};
use hmt_core::{Error, Hmt};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{io_at, CliError, CliResult};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoint.hmt";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.json";

/// One line of the training log.
#[derive(Clone, Debug, Serialize)]
pub struct LogLine {
    pub step: usize,
    pub lr: f64,
    pub hmm: f64,
    pub latency: f64,
    pub state: f64,
    pub total: f64,
    pub grad_norm: f64,
    pub sentences: usize,
}

impl From<&UpdateLog> for LogLine {
    fn from(u: &UpdateLog) -> Self {
        Self {
            step: u.step,
            lr: u.lr,
            hmm: u.loss.hmm,
            latency: u.loss.latency,
            state: u.loss.state,
            total: u.loss.total,
            grad_norm: u.grad_norm,
            sentences: u.sentences,
        }
    }
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    step: usize,
    detail: &'a str,
    last_update: Option<&'a LogLine>,
    /// Model state before the failing update.
    checkpoint: String,
}

pub struct TrainData {
    pub pairs: Vec<SentencePair>,
    pub source_vocab: Vocabulary,
    pub target_vocab: Vocabulary,
}

pub fn load_data(config: &RunConfig) -> CliResult<TrainData> {
    let d = &config.data;
    if let Some(spec) = &d.synthetic {
        let v = synthetic_vocab(spec.vocab_size);
        return Ok(TrainData {
            pairs: generate_synthetic(spec, d.synthetic_pairs)?,
            source_vocab: v.clone(),
            target_vocab: v,
        });
    }
    let (src, tgt) = match (&d.source, &d.target) {
        (Some(s), Some(t)) => (s, t),
        _ => return Err(Error::Config("data: set both source and target, or synthetic".into()).into()),
    };
    let (s, t) = load_parallel_lines(src, tgt)?;
    let source_vocab = build_vocab(&s, d.min_frequency)?;
    let target_vocab = build_vocab(&t, d.min_frequency)?;
    let pairs = s
        .iter()
        .zip(&t)
        .map(|(a, b)| SentencePair {
            source: source_vocab.encode(a),
            target: target_vocab.encode(b),
        })
        .collect();
    Ok(TrainData {
        pairs,
        source_vocab,
        target_vocab,
    })
}

pub struct TrainSummary {
    pub steps: usize,
    pub last: Option<LogLine>,
    pub checkpoint: PathBuf,
}

/// Trains from `config`, writing the update log and checkpoints into `out`.
pub fn run(mut config: RunConfig, out: &Path, seed: Option<u64>) -> CliResult<TrainSummary> {
    if let Some(s) = seed {
        config.train.seed = s;
    }
    config.validate()?;
    let data = load_data(&config)?;
    io_at(out, fs::create_dir_all(out))?;
    let log_path = out.join(LOG_FILE);
    let mut log = std::io::BufWriter::new(io_at(&log_path, fs::File::create(&log_path))?);

    let model = Hmt::new(
        config.model.clone(),
        data.source_vocab.len(),
        data.target_vocab.len(),
        config.train.seed,
    )?;
    let mut trainer = Trainer::new(model, config.train.clone())?;
    let mut last: Option<LogLine> = None;
    let mut sink_error: Option<CliError> = None;
    let result = trainer.fit_with(&data.pairs, |u, model| {
        let line = LogLine::from(u);
        let text = serde_json::to_string(&line).expect("log lines serialize");
        let write = writeln!(log, "{text}").map_err(CliError::from).and_then(|_| {
            if config.checkpoint_every > 0 && u.step % config.checkpoint_every == 0 {
                let path = out.join(format!("checkpoint-{}.hmt", u.step));
                Checkpoint::from_model(model, &config, &data.source_vocab, &data.target_vocab, u.step).save(&path)
            } else {
                Ok(())
            }
        });
        last = Some(line);
        write.map_err(|e| {
            let msg = e.to_string();
            sink_error = Some(e);
            Error::data(msg)
        })
    });
    io_at(&log_path, log.flush())?;
    if let Some(e) = sink_error {
        return Err(e);
    }
    match result {
        Ok(_) => {}
        Err(Error::NonFinite { step, detail }) => {
            let ck = out.join("diagnostic.hmt");
            Checkpoint::from_model(
                trainer.model(),
                &config,
                &data.source_vocab,
                &data.target_vocab,
                step - 1,
            )
            .save(&ck)?;
            let dump = Diagnostic {
                step,
                detail: &detail,
                last_update: last.as_ref(),
                checkpoint: ck.display().to_string(),
            };
            let path = out.join(DIAGNOSTIC_FILE);
            let text = serde_json::to_string_pretty(&dump).expect("diagnostics serialize");
            io_at(&path, fs::write(&path, text))?;
            return Err(CliError::new(
                "non-finite",
                format!(
                    "non-finite loss at update {step}: {detail}; diagnostics in {}",
                    path.display()
                ),
            ));
        }
        Err(e) => return Err(e.into()),
    }
    let checkpoint = out.join(FINAL_CHECKPOINT);
    Checkpoint::from_model(
        trainer.model(),
        &config,
        &data.source_vocab,
        &data.target_vocab,
        trainer.steps(),
    )
    .save(&checkpoint)?;
    Ok(TrainSummary {
        steps: trainer.steps(),
        last,
        checkpoint,
    })
}
