use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, required inputs).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid config field {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("no feasible selection path")]
    NoFeasiblePath,

    #[error("oracle refused: {paths} paths exceeds the enumeration limit {limit}")]
    OracleTooLarge { paths: u128, limit: u128 },

    #[error("source provider failed: {0}")]
    Source(String),

    #[error("non-finite loss at update {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn shape(op: &str, left: &[usize], right: &[usize]) -> Self {
        Error::Contract(format!("{op}: shape mismatch {left:?} vs {right:?}"))
    }
}
