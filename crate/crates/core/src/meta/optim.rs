use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rules::{interpolate, meta_gradient, reptile_update};
use super::{Algorithm, InnerLoopConfig, MetaUpdateConfig, Task};
use crate::error::{Error, Result};
use crate::model::{ParamSet, Partition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

/// Outer optimizer with separate learning rates and weight decay for the
/// prompt and backbone parameter groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// Prompt-group learning rate.
    pub beta: f64,
    pub beta_backbone: f64,
    pub weight_decay: f64,
    pub weight_decay_backbone: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Linear warmup length in outer steps.
    pub warmup_steps: u64,
    /// When set, the rate decays linearly to zero at this outer step.
    pub total_steps: Option<u64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::AdamW,
            beta: 5e-3,
            beta_backbone: 1e-3,
            weight_decay: 0.0,
            weight_decay_backbone: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            warmup_steps: 0,
            total_steps: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, detail: String| Err(Error::Config {
            key: format!("meta.optimizer.{key}"),
            detail,
        });
        for (key, v) in [("beta", self.beta), ("beta_backbone", self.beta_backbone)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(key, format!("must be positive, got {v}"));
            }
        }
        for (key, v) in [("weight_decay", self.weight_decay), ("weight_decay_backbone", self.weight_decay_backbone)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(key, format!("must be non-negative, got {v}"));
            }
        }
        for (key, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(key, format!("must lie in [0, 1), got {v}"));
            }
        }
        if let Some(t) = self.total_steps {
            if t <= self.warmup_steps {
                return bad("total_steps", format!("must exceed warmup_steps ({})", self.warmup_steps));
            }
        }
        Ok(())
    }

    /// Learning-rate multiplier for zero-based outer step `s`.
    pub fn schedule(&self, s: u64) -> f64 {
        if s < self.warmup_steps {
            return (s + 1) as f64 / self.warmup_steps as f64;
        }
        match self.total_steps {
            Some(total) if total > self.warmup_steps => {
                (total.saturating_sub(s)) as f64 / (total - self.warmup_steps) as f64
            }
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(numel: usize) -> Self {
        OptimizerState {
            step: 0,
            m: vec![0.0; numel],
            v: vec![0.0; numel],
        }
    }

    /// Applies one update of `grad` to the entries flagged in `trainable`.
    pub fn apply(&mut self, cfg: &OptimizerConfig, params: &mut ParamSet, grad: &[f64], trainable: &[bool]) -> Result<()> {
        let mut flat = params.flat();
        if grad.len() != flat.len() || self.m.len() != flat.len() {
            return Err(Error::dim(
                "outer_step",
                format!("gradient {}, state {}, parameters {}", grad.len(), self.m.len(), flat.len()),
            ));
        }
        let groups: Vec<Partition> = params
            .entries()
            .iter()
            .flat_map(|e| std::iter::repeat_n(e.partition, e.value.numel()))
            .collect();
        let mult = cfg.schedule(self.step);
        self.step += 1;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - cfg.adam_beta1.powi(t), 1.0 - cfg.adam_beta2.powi(t));
        for i in 0..flat.len() {
            if !trainable[i] {
                continue;
            }
            let (lr, wd) = match groups[i] {
                Partition::Prompt => (cfg.beta * mult, cfg.weight_decay),
                Partition::Backbone => (cfg.beta_backbone * mult, cfg.weight_decay_backbone),
            };
            let g = grad[i];
            match cfg.kind {
                OptimizerKind::Sgd => flat[i] -= lr * g,
                OptimizerKind::AdamW => {
                    self.m[i] = cfg.adam_beta1 * self.m[i] + (1.0 - cfg.adam_beta1) * g;
                    self.v[i] = cfg.adam_beta2 * self.v[i] + (1.0 - cfg.adam_beta2) * g * g;
                    let mhat = self.m[i] / bc1;
                    let vhat = self.v[i] / bc2;
                    flat[i] -= lr * (mhat / (vhat.sqrt() + cfg.adam_eps) + wd * flat[i]);
                }
            }
        }
        params.set_flat(&flat)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterStepReport {
    /// Mean query loss at the adapted parameters over the batch.
    pub query_loss: f64,
    pub peak_tape_nodes: usize,
}

/// One meta-update over a batch of episodes. Per-episode work runs in
/// parallel and is reduced in episode order.
pub fn outer_step<T: Task>(
    params: &mut ParamSet,
    tasks: &[T],
    inner: &InnerLoopConfig,
    meta: &MetaUpdateConfig,
    state: &mut OptimizerState,
) -> Result<OuterStepReport> {
    if tasks.is_empty() {
        return Err(Error::contract("outer step needs at least one episode"));
    }
    meta.validate()?;
    let n = tasks.len() as f64;
    let snapshot: &ParamSet = params;

    if meta.algorithm == Algorithm::Reptile {
        let outcomes: Vec<Result<(Vec<f64>, f64)>> = tasks
            .par_iter()
            .enumerate()
            .map(|(i, task)| {
                let run = || {
                    let (_, adapted) = reptile_update(snapshot, task, inner, meta.epsilon, meta.reptile_use_query)?;
                    let (loss, _) = task.evaluate_query(&adapted)?;
                    Ok((adapted.flat(), loss))
                };
                run().map_err(|e: Error| e.in_episode(i))
            })
            .collect();
        let mut target = vec![0.0; snapshot.numel()];
        let mut loss = 0.0;
        for o in outcomes {
            let (flat, l) = o?;
            for (t, x) in target.iter_mut().zip(flat) {
                *t += x;
            }
            loss += l;
        }
        for t in &mut target {
            *t /= n;
        }
        let updated = interpolate(snapshot, &target, meta.epsilon)?;
        *params = updated;
        state.step += 1;
        return Ok(OuterStepReport {
            query_loss: loss / n,
            peak_tape_nodes: 0,
        });
    }

    let step = state.step;
    let outcomes: Vec<Result<_>> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| meta_gradient(snapshot, task, inner, meta, step).map_err(|e| e.in_episode(i)))
        .collect();
    let mut grad = vec![0.0; snapshot.numel()];
    let mut loss = 0.0;
    let mut peak = 0;
    for o in outcomes {
        let g = o?;
        for (acc, x) in grad.iter_mut().zip(&g.grad) {
            *acc += x;
        }
        loss += g.query_loss;
        peak = peak.max(g.peak_tape_nodes);
    }
    for g in &mut grad {
        *g /= n;
    }
    let mask = snapshot.flat_mask(inner.mask);
    state.apply(&meta.optimizer, params, &grad, &mask)?;
    Ok(OuterStepReport {
        query_loss: loss / n,
        peak_tape_nodes: peak,
    })
}
