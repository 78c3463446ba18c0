use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Answer-label map: label `l` scores as the mean probability of its answer tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalizer {
    answers: Vec<Vec<usize>>,
}

impl Verbalizer {
    pub fn new(answers: Vec<Vec<usize>>, vocab_size: usize) -> Result<Self> {
        let mut seen = vec![false; vocab_size];
        for (label, set) in answers.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::contract(format!("label {label} has no answer tokens")));
            }
            for &id in set {
                if id >= vocab_size {
                    return Err(Error::contract(format!("answer id {id} outside vocabulary of {vocab_size}")));
                }
                if std::mem::replace(&mut seen[id], true) {
                    return Err(Error::contract(format!("answer id {id} is shared between labels")));
                }
            }
        }
        Ok(Verbalizer { answers })
    }

    pub fn num_labels(&self) -> usize {
        self.answers.len()
    }

    pub fn answers(&self, label: usize) -> &[usize] {
        &self.answers[label]
    }

    /// `[vocab, labels]` matrix with `1/|A_l|` at `(a, l)` for every answer `a` of `l`.
    pub fn averaging_matrix(&self, vocab_size: usize) -> Tensor {
        let n = self.answers.len();
        let mut m = Tensor::zeros(&[vocab_size, n]);
        for (l, set) in self.answers.iter().enumerate() {
            let w = 1.0 / set.len() as f64;
            for &a in set {
                m.data_mut()[a * n + l] = w;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_sets() {
        assert!(Verbalizer::new(vec![vec![1], vec![2, 3]], 4).is_ok());
        assert!(Verbalizer::new(vec![vec![1], vec![1]], 4).is_err());
        assert!(Verbalizer::new(vec![vec![], vec![1]], 4).is_err());
        assert!(Verbalizer::new(vec![vec![7]], 4).is_err());
    }

    #[test]
    fn averaging_matrix_columns() {
        let v = Verbalizer::new(vec![vec![0], vec![1, 3]], 4).unwrap();
        let m = v.averaging_matrix(4);
        assert_eq!(m.data(), &[1.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.5]);
    }
}
