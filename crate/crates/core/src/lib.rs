//! Hidden Markov Transformer for simultaneous translation.

pub mod data;
pub mod error;
pub mod hmm;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod policy;
pub mod train;

pub use error::{Error, Result};
pub use hmm::{Objective, SelectionPath};
pub use model::{AttentionMode, ConfidenceMatrix, Hmt, HmtConfig, MomentGrid, Parameters};
