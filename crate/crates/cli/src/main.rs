use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hmt_cli::error::{CliError, CliResult};
use hmt_cli::translate::{Sink, TranslateOptions};
use hmt_cli::{analyze, evaluate, synth, trace_file, train, translate, RunConfig};
use hmt_core::data::{SyntheticTaskSpec, TaskKind};
use hmt_core::policy::PolicyMode;
use hmt_core::AttentionMode;

/// Simultaneous translation with the Hidden Markov Transformer.
#[derive(Parser)]
#[command(name = "hmt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the log and checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Translate one sentence per line from a file or stdin.
    Translate(TranslateArgs),
    /// Corpus BLEU and latency of a trace file.
    Evaluate {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Pharaoh alignments for the aligned proportion.
        #[arg(long)]
        alignments: Option<PathBuf>,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Confidence calibration and BLEU by path probability.
    Analyze {
        /// Trace files; repeat for several runs.
        #[arg(long, required = true)]
        traces: Vec<PathBuf>,
        /// References, one per trace file.
        #[arg(long, required = true)]
        reference: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Generate a synthetic parallel corpus with alignments.
    Synth {
        #[arg(long, value_parser = parse_task)]
        task: TaskKind,
        #[arg(long, default_value_t = 10)]
        vocab_size: usize,
        #[arg(long, default_value_t = 5)]
        min_len: usize,
        #[arg(long, default_value_t = 12)]
        max_len: usize,
        #[arg(long, default_value_t = 0)]
        lag: usize,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "data")]
        prefix: String,
    },
    /// Check that every record replays to its recorded schedule.
    ValidateTrace {
        #[arg(long)]
        traces: PathBuf,
    },
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Source sentences; stdin when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    /// adaptive, wait-k or force-decode.
    #[arg(long, default_value = "adaptive", value_parser = parse_mode)]
    mode: PolicyMode,
    #[arg(long)]
    delta: Option<f64>,
    /// multiple, max or selected.
    #[arg(long, value_parser = parse_attention)]
    attention: Option<AttentionMode>,
    #[arg(long)]
    max_target_len: Option<usize>,
    /// Gold targets for force-decode.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Directory for hypotheses and traces; hypotheses go to stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<PolicyMode, String> {
    s.parse().map_err(|e: hmt_core::Error| e.to_string())
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse().map_err(|e: hmt_core::Error| e.to_string())
}

fn parse_attention(s: &str) -> Result<AttentionMode, String> {
    s.parse().map_err(|e: hmt_core::Error| e.to_string())
}

fn print_json(value: &impl serde::Serialize) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::format(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config, out, seed } => {
            let cfg = RunConfig::load(&config)?;
            let summary = train::run(cfg, &out, seed)?;
            match &summary.last {
                Some(l) => println!(
                    "trained {} updates: total loss {:.4} (hmm {:.4}, latency {:.4}, state {:.4}); checkpoint {}",
                    summary.steps,
                    l.total,
                    l.hmm,
                    l.latency,
                    l.state,
                    summary.checkpoint.display()
                ),
                None => println!("no updates run; checkpoint {}", summary.checkpoint.display()),
            }
        }
        Command::Translate(a) => {
            let opts = TranslateOptions {
                mode: a.mode,
                delta: a.delta,
                attention: a.attention,
                max_target_len: a.max_target_len,
                reference: a.reference,
            };
            let sink = a.out.clone().map_or(Sink::Stdout, Sink::Directory);
            let n = translate::run(&a.checkpoint, a.input.as_deref(), &opts, sink)?;
            if let Some(dir) = a.out {
                println!("translated {n} sentences into {}", dir.display());
            }
        }
        Command::Evaluate {
            traces,
            reference,
            alignments,
            out,
        } => {
            let report = evaluate::run(&traces, &reference, alignments.as_deref())?;
            let text = print_json(&report)?;
            if let Some(p) = out {
                hmt_cli::error::io_at(&p, std::fs::write(&p, format!("{text}\n")))?;
            }
            println!("{text}");
        }
        Command::Analyze {
            traces,
            reference,
            out,
            bins,
        } => {
            let files = analyze::run(&traces, &reference, &out, bins)?;
            match files.confidence {
                Some(p) => println!("wrote {}", p.display()),
                None => println!("no force-decode judgments in the traces; skipped the confidence table"),
            }
            println!("wrote {}", files.probability.display());
        }
        Command::Synth {
            task,
            vocab_size,
            min_len,
            max_len,
            lag,
            count,
            seed,
            out,
            prefix,
        } => {
            let spec = SyntheticTaskSpec {
                kind: task,
                vocab_size,
                min_len,
                max_len,
                lag,
                seed,
            };
            let files = synth::run(&spec, count, &out, &prefix)?;
            println!(
                "wrote {count} pairs: {} {} {}",
                files.source.display(),
                files.target.display(),
                files.alignments.display()
            );
        }
        Command::ValidateTrace { traces } => {
            let records = trace_file::read_traces(&traces)?;
            println!("{} records valid", records.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let msg = first
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::usage(msg));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
