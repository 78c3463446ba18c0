use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Label-disjoint train / validation / test label sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRequest {
    Fractions { train: f64, val: f64, test: f64 },
    Explicit { train: Vec<usize>, val: Vec<usize>, test: Vec<usize> },
}

impl Default for SplitRequest {
    fn default() -> Self {
        SplitRequest::Fractions {
            train: 0.5,
            val: 0.2,
            test: 0.3,
        }
    }
}

impl SplitSpec {
    pub fn labels(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn validate(&self, num_labels: usize, min_way: usize) -> Result<()> {
        let mut seen = vec![false; num_labels];
        for (split, set) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if set.len() < min_way {
                return Err(Error::Capacity(format!(
                    "{split} split has {} labels, episodes need {min_way}",
                    set.len()
                )));
            }
            for &l in set {
                if l >= num_labels {
                    return Err(Error::contract(format!("label {l} is not in the corpus")));
                }
                if std::mem::replace(&mut seen[l], true) {
                    return Err(Error::contract(format!("label {l} appears in more than one split")));
                }
            }
        }
        Ok(())
    }
}

/// Partitions the corpus labels so that every split can host `min_way`-way episodes.
pub fn make_splits(corpus: &Corpus, request: &SplitRequest, seed: u64, min_way: usize) -> Result<SplitSpec> {
    let n = corpus.num_labels();
    if n < 3 * min_way {
        return Err(Error::Capacity(format!(
            "{n} labels cannot form three {min_way}-way splits"
        )));
    }
    let spec = match request {
        SplitRequest::Explicit { train, val, test } => SplitSpec {
            train: train.clone(),
            val: val.clone(),
            test: test.clone(),
            seed,
        },
        SplitRequest::Fractions { train, val, test } => {
            let total = train + val + test;
            if !(total > 0.0) || [*train, *val, *test].iter().any(|f| *f < 0.0) {
                return Err(Error::contract("split fractions must be non-negative with a positive sum"));
            }
            let mut labels: Vec<usize> = (0..n).collect();
            labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut n_val = ((val / total) * n as f64).round() as usize;
            let mut n_test = ((test / total) * n as f64).round() as usize;
            n_val = n_val.max(min_way);
            n_test = n_test.max(min_way);
            while n_val + n_test + min_way > n {
                if n_val >= n_test && n_val > min_way {
                    n_val -= 1;
                } else if n_test > min_way {
                    n_test -= 1;
                } else {
                    break;
                }
            }
            let n_train = n - n_val - n_test;
            SplitSpec {
                train: labels[..n_train].to_vec(),
                val: labels[n_train..n_train + n_val].to_vec(),
                test: labels[n_train + n_val..].to_vec(),
                seed,
            }
        }
    };
    spec.validate(n, min_way)?;
    Ok(spec)
}
