//! Moment grid, confidences and the Transformer that scores them.

mod confidence;
mod config;
mod grid;
mod masks;
mod network;
mod params;

pub use confidence::{ConfidenceMatrix, LogConfidence, MAX_PREDICTED_CONFIDENCE, MIN_PREDICTED_CONFIDENCE};
pub use config::{AttentionMode, HmtConfig};
pub use grid::{moment, MomentGrid};
pub use masks::{causal_mask, cross_attention_mask, self_attention_mask};
pub use network::{sinusoidal_positions, BoundParams, Dropout, Hmt, SentenceForward};
pub use params::Parameters;
