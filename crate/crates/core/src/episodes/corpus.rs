use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Verbalizer, Vocab};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
}

/// Labeled token-id texts plus the vocabulary and per-label answer tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub examples: Vec<Example>,
    pub label_names: Vec<String>,
    /// Answer token ids of every label, used to build episode verbalizers.
    pub label_answers: Vec<Vec<usize>>,
    pub vocab: Vocab,
    pub domain: String,
}

impl Corpus {
    pub fn new(
        examples: Vec<Example>,
        label_names: Vec<String>,
        label_answers: Vec<Vec<usize>>,
        vocab: Vocab,
        domain: impl Into<String>,
    ) -> Result<Self> {
        if label_names.len() != label_answers.len() {
            return Err(Error::contract("every label needs an answer set"));
        }
        let mut names = label_names.clone();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::contract("label names must be unique"));
        }
        if let Some(e) = examples.iter().find(|e| e.label >= label_names.len()) {
            return Err(Error::contract(format!("example label {} is not declared", e.label)));
        }
        if let Some(e) = examples.iter().find(|e| e.tokens.iter().any(|&t| t >= vocab.len())) {
            return Err(Error::contract(format!("example of label {} has out-of-vocabulary ids", e.label)));
        }
        // Validates disjointness and range of answer sets.
        Verbalizer::new(label_answers.clone(), vocab.len())?;
        Ok(Corpus {
            examples,
            label_names,
            label_answers,
            vocab,
            domain: domain.into(),
        })
    }

    pub fn num_labels(&self) -> usize {
        self.label_names.len()
    }

    /// Example indices grouped by label.
    pub fn by_label(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_labels()];
        for (i, e) in self.examples.iter().enumerate() {
            out[e.label].push(i);
        }
        out
    }

    /// Verbalizer over `palette`: local label `j` answers with the tokens of global label `palette[j]`.
    pub fn verbalizer(&self, palette: &[usize]) -> Result<Verbalizer> {
        Verbalizer::new(
            palette.iter().map(|&l| self.label_answers[l].clone()).collect(),
            self.vocab.len(),
        )
    }
}
