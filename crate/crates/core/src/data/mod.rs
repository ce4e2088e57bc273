//! Vocabularies, parallel corpora, synthetic lag tasks and batching.

mod batch;
mod corpus;
mod synthetic;
mod vocab;

pub use batch::{make_batches, padded_len, Example, ParallelBatch};
pub use corpus::{load_lines, load_parallel_corpus, load_parallel_lines, SentencePair};
pub use synthetic::{
    generate_synthetic, synthetic_vocab, SyntheticTaskSpec, TaskKind, FIRST_CONTENT, SENTINEL, SENTINEL_TOKEN,
};
pub use vocab::{build_vocab, Vocabulary, BOS, EOS, PAD, RESERVED, UNK};
