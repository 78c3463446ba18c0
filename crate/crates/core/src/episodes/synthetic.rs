//! Synthetic topic corpora.
//!
//! Each label owns `topic_words` topic tokens plus a name token that doubles
//! as its answer word. A text position is an anchor word with probability
//! `function_words`, else a background word with probability `background`;
//! otherwise it draws from the label's own topic
//! set with probability `1 - overlap` and from the pooled topic sets of all
//! labels with probability `overlap`. At `overlap = 1` every label has the
//! same distribution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, Example};
use crate::error::{Error, Result};
use crate::model::Vocab;

/// Template words always present in synthetic vocabularies.
pub const ANCHOR_WORDS: &[&str] = &["the", "topic", "is", "about", "this", "category", "it", "news", ".", ":"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub labels: usize,
    pub topic_words: usize,
    pub background_words: usize,
    pub examples_per_label: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a position is one of [`ANCHOR_WORDS`].
    pub function_words: f64,
    /// Probability that a non-anchor position is a background word.
    pub background: f64,
    /// Share of topic draws taken from the pooled topic sets.
    pub overlap: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            labels: 30,
            topic_words: 6,
            background_words: 40,
            examples_per_label: 40,
            min_len: 8,
            max_len: 14,
            function_words: 0.1,
            background: 0.5,
            overlap: 0.5,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.labels == 0 {
            return Err(Error::contract("synthetic corpus needs at least one label"));
        }
        if self.topic_words == 0 {
            return Err(Error::contract("synthetic corpus needs topic words"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::contract("text length range must satisfy 1 <= min_len <= max_len"));
        }
        if ![self.function_words, self.background, self.overlap]
            .iter()
            .all(|p| (0.0..=1.0).contains(p))
        {
            return Err(Error::contract("function_words, background and overlap must lie in [0, 1]"));
        }
        if self.function_words == 1.0 {
            return Err(Error::contract("function_words = 1 leaves no content words"));
        }
        if self.background > 0.0 && self.background_words == 0 {
            return Err(Error::contract("background probability needs background words"));
        }
        if self.background == 1.0 {
            return Err(Error::contract("background = 1 leaves no topic words"));
        }
        Ok(())
    }

    pub fn name_token(label: usize) -> String {
        format!("lab{label}")
    }

    pub fn topic_token(label: usize, j: usize) -> String {
        format!("t{label}_{j}")
    }

    pub fn background_token(j: usize) -> String {
        format!("bg{j}")
    }
}

/// Token ids of label `l`'s topic set: its topic words followed by its name token.
fn topic_sets(spec: &SyntheticSpec, vocab: &Vocab) -> Vec<Vec<usize>> {
    (0..spec.labels)
        .map(|l| {
            let mut set: Vec<usize> = (0..spec.topic_words)
                .map(|j| vocab.id(&SyntheticSpec::topic_token(l, j)).expect("vocab built"))
                .collect();
            set.push(vocab.id(&SyntheticSpec::name_token(l)).expect("vocab built"));
            set
        })
        .collect()
}

pub fn generate_synthetic_corpus(spec: &SyntheticSpec, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let mut vocab = Vocab::new();
    let anchors: Vec<usize> = ANCHOR_WORDS.iter().map(|w| vocab.insert(w)).collect();
    let background: Vec<usize> = (0..spec.background_words)
        .map(|j| vocab.insert(&SyntheticSpec::background_token(j)))
        .collect();
    for l in 0..spec.labels {
        vocab.insert(&SyntheticSpec::name_token(l));
        for j in 0..spec.topic_words {
            vocab.insert(&SyntheticSpec::topic_token(l, j));
        }
    }
    let sets = topic_sets(spec, &vocab);
    let pooled: Vec<usize> = sets.iter().flatten().copied().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(spec.labels * spec.examples_per_label);
    for (l, own) in sets.iter().enumerate() {
        for _ in 0..spec.examples_per_label {
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let tokens = (0..len)
                .map(|_| {
                    if rng.random::<f64>() < spec.function_words {
                        anchors[rng.random_range(0..anchors.len())]
                    } else if rng.random::<f64>() < spec.background {
                        background[rng.random_range(0..background.len())]
                    } else if rng.random::<f64>() < spec.overlap {
                        pooled[rng.random_range(0..pooled.len())]
                    } else {
                        own[rng.random_range(0..own.len())]
                    }
                })
                .collect();
            examples.push(Example { tokens, label: l });
        }
    }
    let label_names = (0..spec.labels).map(SyntheticSpec::name_token).collect();
    let label_answers = (0..spec.labels)
        .map(|l| vec![vocab.id(&SyntheticSpec::name_token(l)).expect("vocab built")])
        .collect();
    Corpus::new(examples, label_names, label_answers, vocab, "synthetic")
}
