use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, Example};
use crate::error::{Error, Result};
use crate::model::Verbalizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeShape {
    pub way: usize,
    pub shot: usize,
    pub query: usize,
}

impl Default for EpisodeShape {
    fn default() -> Self {
        EpisodeShape {
            way: 5,
            shot: 5,
            query: 10,
        }
    }
}

/// One N-way K-shot task. Example labels are local indices into `palette`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub shape: EpisodeShape,
    pub palette: Vec<usize>,
    pub support: Vec<Example>,
    pub query: Vec<Example>,
}

impl Episode {
    pub fn verbalizer(&self, corpus: &Corpus) -> Result<Verbalizer> {
        corpus.verbalizer(&self.palette)
    }

    pub fn support_batch(&self) -> (Vec<&[usize]>, Vec<usize>) {
        batch(&self.support)
    }

    pub fn query_batch(&self) -> (Vec<&[usize]>, Vec<usize>) {
        batch(&self.query)
    }
}

fn batch(examples: &[Example]) -> (Vec<&[usize]>, Vec<usize>) {
    (
        examples.iter().map(|e| e.tokens.as_slice()).collect(),
        examples.iter().map(|e| e.label).collect(),
    )
}

/// Draws episodes from a fixed label pool of a corpus.
#[derive(Debug, Clone)]
pub struct EpisodeSampler<'a> {
    corpus: &'a Corpus,
    labels: Vec<usize>,
    by_label: Vec<Vec<usize>>,
    shape: EpisodeShape,
}

impl<'a> EpisodeSampler<'a> {
    pub fn new(corpus: &'a Corpus, labels: &[usize], shape: EpisodeShape) -> Result<Self> {
        if shape.way < 2 || shape.shot == 0 || shape.query == 0 {
            return Err(Error::contract("episodes need way >= 2, shot >= 1 and query >= 1"));
        }
        if labels.len() < shape.way {
            return Err(Error::Capacity(format!(
                "{}-way episodes need {} labels, pool has {}",
                shape.way,
                shape.way,
                labels.len()
            )));
        }
        let all = corpus.by_label();
        let need = shape.shot + shape.query;
        let mut by_label = Vec::with_capacity(labels.len());
        for &l in labels {
            let ex = all.get(l).ok_or_else(|| Error::contract(format!("label {l} is not in the corpus")))?;
            if ex.len() < need {
                return Err(Error::Capacity(format!(
                    "label `{}` has {} examples, episodes need {need}",
                    corpus.label_names[l],
                    ex.len()
                )));
            }
            by_label.push(ex.clone());
        }
        Ok(EpisodeSampler {
            corpus,
            labels: labels.to_vec(),
            by_label,
            shape,
        })
    }

    pub fn shape(&self) -> EpisodeShape {
        self.shape
    }

    pub fn corpus(&self) -> &'a Corpus {
        self.corpus
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Episode {
        let EpisodeShape { way, shot, query } = self.shape;
        let picked = index::sample(rng, self.labels.len(), way);
        let mut palette = Vec::with_capacity(way);
        let mut support = Vec::with_capacity(way * shot);
        let mut queries = Vec::with_capacity(way * query);
        for (local, slot) in picked.iter().enumerate() {
            palette.push(self.labels[slot]);
            let pool = &self.by_label[slot];
            let chosen = index::sample(rng, pool.len(), shot + query);
            for (k, i) in chosen.iter().enumerate() {
                let e = Example {
                    tokens: self.corpus.examples[pool[i]].tokens.clone(),
                    label: local,
                };
                if k < shot {
                    support.push(e);
                } else {
                    queries.push(e);
                }
            }
        }
        Episode {
            shape: self.shape,
            palette,
            support,
            query: queries,
        }
    }

    /// `count` episodes drawn from a generator seeded with `seed`.
    pub fn stream(&self, seed: u64, count: usize) -> Vec<Episode> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.sample(&mut rng)).collect()
    }
}
