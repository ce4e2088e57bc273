//! Latency, quality and policy-analysis metrics. Lag schedules `g` are
//! one-based source counts.

mod alignment;
mod analysis;
mod bleu;
mod latency;

pub use alignment::{parse_pharaoh, write_pharaoh};
pub use analysis::{
    bleu_by_path_probability, confidence_accuracy_bins, AccuracyBin, BleuBin, ScoredSentence, CONFIDENCE_BINS,
    PROBABILITY_BINS,
};
pub use bleu::{corpus_bleu, tokenize, MAX_ORDER};
pub use latency::{
    aligned_proportion, average_lagging, average_proportion, consecutive_wait, differentiable_average_lagging,
    validate_schedule, LatencyReport,
};
