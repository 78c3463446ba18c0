//! Meta-learning update rules: second-order MAML, first-order MAML, Reptile
//! and multi-step-loss MAML.
//!
//! Every rule works on a [`ParamSet`] and a [`Task`], which supplies the
//! support and query losses of one episode.

mod inner;
mod optim;
mod rules;
mod task;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParamSet, PartitionMask};

pub use inner::{adapt, AdaptationTrace};
pub use optim::{outer_step, OptimizerConfig, OptimizerKind, OptimizerState, OuterStepReport};
pub use rules::{meta_gradient, meta_gradient_fomaml, meta_gradient_maml, meta_gradient_mslb, reptile_update, MetaGradient};
pub use task::{EpisodeTask, QuadraticTask, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerLoopConfig {
    pub steps: usize,
    pub alpha: f64,
    pub mask: PartitionMask,
    /// Support minibatch size; `None` or a size above the support set means full batch.
    pub batch_size: Option<usize>,
}

impl Default for InnerLoopConfig {
    fn default() -> Self {
        InnerLoopConfig {
            steps: 1,
            alpha: 0.1,
            mask: PartitionMask::PROMPT_ONLY,
            batch_size: None,
        }
    }
}

impl InnerLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::Config {
                key: "inner.alpha".into(),
                detail: format!("must be finite and non-negative, got {}", self.alpha),
            });
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config {
                key: "inner.batch_size".into(),
                detail: "must be positive".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Maml,
    Fomaml,
    Reptile,
    Mslb,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Maml, Algorithm::Fomaml, Algorithm::Reptile, Algorithm::Mslb];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Maml => "maml",
            Algorithm::Fomaml => "fomaml",
            Algorithm::Reptile => "reptile",
            Algorithm::Mslb => "mslb",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config {
                key: "meta.algorithm".into(),
                detail: format!("unknown algorithm `{s}` (expected maml, fomaml, reptile or mslb)"),
            })
    }
}

/// Per-inner-step weights of the multi-step query loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepWeights {
    Uniform,
    LastStep,
    Explicit(Vec<f64>),
}

impl StepWeights {
    /// Weights for `steps` inner steps. `anneal` in [0, 1] blends linearly
    /// from these weights toward last-step-only.
    pub fn resolve(&self, steps: usize, anneal: f64) -> Result<Vec<f64>> {
        let mut w = match self {
            StepWeights::Uniform => vec![1.0 / steps as f64; steps],
            StepWeights::LastStep => {
                let mut w = vec![0.0; steps];
                if let Some(last) = w.last_mut() {
                    *last = 1.0;
                }
                w
            }
            StepWeights::Explicit(w) => {
                if w.len() != steps {
                    return Err(Error::contract(format!(
                        "{} step weights given for {steps} inner steps",
                        w.len()
                    )));
                }
                if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(Error::contract("step weights must be finite and non-negative"));
                }
                let total: f64 = w.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::contract(format!("step weights sum to {total}, expected 1")));
                }
                w.clone()
            }
        };
        let t = anneal.clamp(0.0, 1.0);
        if t > 0.0 {
            let last = w.len() - 1;
            for (k, x) in w.iter_mut().enumerate() {
                let target = if k == last { 1.0 } else { 0.0 };
                *x = (1.0 - t) * *x + t * target;
            }
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaUpdateConfig {
    pub algorithm: Algorithm,
    pub optimizer: OptimizerConfig,
    pub mslb_weights: StepWeights,
    /// Outer steps over which the step weights anneal to last-step-only.
    pub mslb_anneal_steps: Option<u64>,
    pub epsilon: f64,
    pub reptile_use_query: bool,
}

impl Default for MetaUpdateConfig {
    fn default() -> Self {
        MetaUpdateConfig {
            algorithm: Algorithm::Maml,
            optimizer: OptimizerConfig::default(),
            mslb_weights: StepWeights::Uniform,
            mslb_anneal_steps: None,
            epsilon: 0.5,
            reptile_use_query: false,
        }
    }
}

impl MetaUpdateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config {
                key: "meta.epsilon".into(),
                detail: format!("must lie in (0, 1], got {}", self.epsilon),
            });
        }
        self.optimizer.validate()
    }

    /// Step weights in effect after `outer_steps` completed outer updates.
    pub fn step_weights(&self, steps: usize, outer_steps: u64) -> Result<Vec<f64>> {
        let anneal = match self.mslb_anneal_steps {
            Some(n) if n > 0 => outer_steps as f64 / n as f64,
            _ => 0.0,
        };
        self.mslb_weights.resolve(steps, anneal)
    }
}

/// Indices of the entries the mask leaves trainable.
pub(crate) fn trainable(params: &ParamSet, mask: PartitionMask) -> Vec<usize> {
    params
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| mask.includes(e.partition))
        .map(|(i, _)| i)
        .collect()
}
