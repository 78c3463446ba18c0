//! Corpora, label splits and few-shot episode sampling.

mod corpus;
mod jsonl;
mod sampler;
mod split;
mod synthetic;

pub use corpus::{Corpus, Example};
pub use jsonl::{label_token, load_jsonl, write_jsonl, VocabPolicy};
pub use sampler::{Episode, EpisodeSampler, EpisodeShape};
pub use split::{make_splits, Split, SplitRequest, SplitSpec};
pub use synthetic::{generate_synthetic_corpus, SyntheticSpec, ANCHOR_WORDS};

#[cfg(test)]
mod tests;
