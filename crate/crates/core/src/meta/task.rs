use std::ops::Range;

use crate::autodiff::{Tape, Var};
use crate::episodes::{Corpus, Episode};
use crate::error::{Error, Result};
use crate::model::{ParamSet, Partition, PartitionMask, PromptModel, Verbalizer};
use crate::tensor::Tensor;

/// Losses of one episode as differentiable functions of the parameters.
pub trait Task: Sync {
    /// Number of support items that `support_loss` ranges index into.
    fn support_len(&self) -> usize;

    /// Mean support loss over the items in `range`.
    fn support_loss(&self, tape: &mut Tape, vars: &[Var], range: Range<usize>) -> Result<Var>;

    fn query_loss(&self, tape: &mut Tape, vars: &[Var]) -> Result<Var>;

    /// Loss over support and query items together.
    fn joint_loss(&self, tape: &mut Tape, vars: &[Var]) -> Result<Var>;

    /// Query loss and accuracy without recording gradients.
    fn evaluate_query(&self, params: &ParamSet) -> Result<(f64, f64)>;
}

/// Prompt-model losses on one sampled episode.
#[derive(Debug, Clone)]
pub struct EpisodeTask<'a> {
    model: &'a PromptModel,
    verbalizer: Verbalizer,
    support: Vec<&'a [usize]>,
    support_labels: Vec<usize>,
    query: Vec<&'a [usize]>,
    query_labels: Vec<usize>,
}

impl<'a> EpisodeTask<'a> {
    pub fn new(model: &'a PromptModel, episode: &'a Episode, corpus: &Corpus) -> Result<Self> {
        if episode.support.is_empty() || episode.query.is_empty() {
            return Err(Error::contract("episode support and query sets must be non-empty"));
        }
        let (support, support_labels) = episode.support_batch();
        let (query, query_labels) = episode.query_batch();
        Ok(EpisodeTask {
            model,
            verbalizer: episode.verbalizer(corpus)?,
            support,
            support_labels,
            query,
            query_labels,
        })
    }

    pub fn verbalizer(&self) -> &Verbalizer {
        &self.verbalizer
    }

    /// Support loss and accuracy without recording gradients.
    pub fn evaluate_support(&self, params: &ParamSet) -> Result<(f64, f64)> {
        let e = self
            .model
            .evaluate(params, &self.support, &self.support_labels, &self.verbalizer)?;
        Ok((e.loss, e.accuracy))
    }
}

impl Task for EpisodeTask<'_> {
    fn support_len(&self) -> usize {
        self.support.len()
    }

    fn support_loss(&self, tape: &mut Tape, vars: &[Var], range: Range<usize>) -> Result<Var> {
        self.model.task_loss(
            tape,
            vars,
            &self.support[range.clone()],
            &self.support_labels[range],
            &self.verbalizer,
        )
    }

    fn query_loss(&self, tape: &mut Tape, vars: &[Var]) -> Result<Var> {
        self.model
            .task_loss(tape, vars, &self.query, &self.query_labels, &self.verbalizer)
    }

    fn joint_loss(&self, tape: &mut Tape, vars: &[Var]) -> Result<Var> {
        let texts: Vec<&[usize]> = self.support.iter().chain(&self.query).copied().collect();
        let labels: Vec<usize> = self.support_labels.iter().chain(&self.query_labels).copied().collect();
        self.model.task_loss(tape, vars, &texts, &labels, &self.verbalizer)
    }

    fn evaluate_query(&self, params: &ParamSet) -> Result<(f64, f64)> {
        let e = self
            .model
            .evaluate(params, &self.query, &self.query_labels, &self.verbalizer)?;
        Ok((e.loss, e.accuracy))
    }
}

/// Quadratic support and query losses `(φ - c)ᵀ A (φ - c)` over a single
/// parameter row named `phi`. Accuracy is reported as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask {
    support_center: Tensor,
    support_curvature: Tensor,
    query_center: Tensor,
    query_curvature: Tensor,
}

impl QuadraticTask {
    pub fn new(support_center: Vec<f64>, support_curvature: Tensor, query_center: Vec<f64>, query_curvature: Tensor) -> Result<Self> {
        let n = support_center.len();
        if n == 0 || query_center.len() != n {
            return Err(Error::dim("quadratic_task", "centers must be non-empty and of equal length"));
        }
        for a in [&support_curvature, &query_curvature] {
            if a.shape() != [n, n] {
                return Err(Error::dim("quadratic_task", format!("curvature shape {:?}, expected [{n}, {n}]", a.shape())));
            }
        }
        Ok(QuadraticTask {
            support_center: Tensor::row(support_center),
            support_curvature,
            query_center: Tensor::row(query_center),
            query_curvature,
        })
    }

    /// `L_s = (φ - a)²`, `L_q = (φ - b)²`.
    pub fn scalar(a: f64, b: f64) -> Self {
        let one = Tensor::matrix(1, 1, vec![1.0]).expect("1x1");
        QuadraticTask::new(vec![a], one.clone(), vec![b], one).expect("valid scalar task")
    }

    pub fn params(phi: Vec<f64>) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("phi", Partition::Prompt, Tensor::row(phi));
        p
    }

    fn loss(tape: &mut Tape, phi: Var, center: &Tensor, curvature: &Tensor) -> Result<Var> {
        let c = tape.constant(center.clone())?;
        let a = tape.constant(curvature.clone())?;
        let d = tape.sub(phi, c)?;
        let da = tape.matmul(d, a)?;
        let q = tape.mul(da, d)?;
        tape.sum(q)
    }

    fn phi(vars: &[Var]) -> Result<Var> {
        match vars {
            [phi] => Ok(*phi),
            _ => Err(Error::contract("quadratic task expects a single `phi` parameter")),
        }
    }
}

impl Task for QuadraticTask {
    fn support_len(&self) -> usize {
        1
    }

    fn support_loss(&self, tape: &mut Tape, vars: &[Var], _range: Range<usize>) -> Result<Var> {
        Self::loss(tape, Self::phi(vars)?, &self.support_center, &self.support_curvature)
    }

    fn query_loss(&self, tape: &mut Tape, vars: &[Var]) -> Result<Var> {
        Self::loss(tape, Self::phi(vars)?, &self.query_center, &self.query_curvature)
    }

    fn joint_loss(&self, tape: &mut Tape, vars: &[Var]) -> Result<Var> {
        let s = self.support_loss(tape, vars, 0..1)?;
        let q = self.query_loss(tape, vars)?;
        tape.add(s, q)
    }

    fn evaluate_query(&self, params: &ParamSet) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let vars = params.to_vars(&mut tape, PartitionMask::NONE)?;
        let l = self.query_loss(&mut tape, &vars)?;
        Ok((tape.scalar(l), 0.0))
    }
}
