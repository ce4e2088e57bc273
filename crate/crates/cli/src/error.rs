use std::fmt;

use hmt_core::Error;

/// An error with a short machine-readable code, printed as
/// `error[code]: message` on one line.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", message)
    }

    pub fn format(message: impl Into<String>) -> Self {
        Self::new("format", message)
    }

    /// Exit status for this error class.
    pub fn exit_code(&self) -> i32 {
        if self.code == "usage" {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.replace('\n', " ");
        write!(f, "error[{}]: {}", self.code, one_line.trim())
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::NoFeasiblePath => "numeric",
            Error::OracleTooLarge { .. } => "oracle",
            Error::Source(_) => "source",
            Error::NonFinite { .. } => "non-finite",
            Error::Io(_) => "io",
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new("io", e.to_string())
    }
}

/// Attaches a path to I/O failures.
pub fn io_at<T>(path: &std::path::Path, r: std::io::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}
