//! Library side of the `hmt` command: run configs, checkpoints, trace
//! files and the subcommand implementations.

pub mod analyze;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod synth;
pub mod trace_file;
pub mod train;
pub mod translate;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use trace_file::TraceRecord;
