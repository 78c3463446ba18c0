use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{trainable, InnerLoopConfig, Task};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::ParamSet;

/// Losses and accuracies recorded while adapting to one episode.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdaptationTrace {
    /// Support loss at which each inner step was taken.
    pub support_loss: Vec<f64>,
    /// Query loss before any step and after every step (empty when not recorded).
    pub query_loss: Vec<f64>,
    pub query_accuracy: Vec<f64>,
    /// Largest tape built while adapting.
    pub peak_tape_nodes: usize,
}

/// Support ranges visited by successive inner steps.
pub(crate) fn support_batches(len: usize, batch_size: Option<usize>) -> Vec<Range<usize>> {
    match batch_size {
        Some(b) if b < len => (0..len).step_by(b).map(|s| s..(s + b).min(len)).collect(),
        _ => vec![0..len],
    }
}

pub(crate) fn check_loss(tape: &Tape, loss: Var, what: &'static str, step: usize) -> Result<()> {
    if tape.scalar(loss).is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what, step })
    }
}

pub(crate) fn check_grads(tape: &Tape, grads: &[Var], step: usize) -> Result<()> {
    if grads.iter().all(|&g| tape.value(g).is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what: "gradient", step })
    }
}

/// Domain failures inside inner step `step` surface as non-finite errors for that step.
pub(crate) fn at_step<T>(step: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::NumericDomain { .. } => Error::NonFinite {
            what: "loss or gradient",
            step,
        },
        other => other,
    })
}

/// Which loss drives the inner loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum InnerLoss {
    Support,
    Joint,
}

/// One plain gradient step on a fresh tape; returns the loss and tape size.
fn value_step<T: Task + ?Sized>(
    task: &T,
    params: &mut ParamSet,
    cfg: &InnerLoopConfig,
    train: &[usize],
    loss: InnerLoss,
    range: Range<usize>,
    step: usize,
) -> Result<(f64, usize)> {
    let mut tape = Tape::new();
    let vars = params.to_vars(&mut tape, cfg.mask)?;
    let l = match loss {
        InnerLoss::Support => task.support_loss(&mut tape, &vars, range)?,
        InnerLoss::Joint => task.joint_loss(&mut tape, &vars)?,
    };
    check_loss(&tape, l, "support loss", step)?;
    let wrt: Vec<Var> = train.iter().map(|&i| vars[i]).collect();
    let grads = tape.grad(l, &wrt, false)?;
    check_grads(&tape, &grads, step)?;
    let alpha = cfg.alpha;
    for (&i, &g) in train.iter().zip(&grads) {
        let updated = params.get(i).zip_with(tape.value(g), "inner_step", |x, g| x - g * alpha)?;
        *params.get_mut(i) = updated;
    }
    Ok((tape.scalar(l), tape.node_count()))
}

pub(crate) fn adapt_with<T: Task + ?Sized>(
    params: &ParamSet,
    task: &T,
    cfg: &InnerLoopConfig,
    loss: InnerLoss,
    record_query: bool,
) -> Result<(ParamSet, AdaptationTrace)> {
    cfg.validate()?;
    if task.support_len() == 0 {
        return Err(Error::contract("support set is empty"));
    }
    let train = trainable(params, cfg.mask);
    let batches = support_batches(task.support_len(), cfg.batch_size);
    let mut current = params.clone();
    let mut trace = AdaptationTrace::default();
    let record = |p: &ParamSet, trace: &mut AdaptationTrace| -> Result<()> {
        if record_query {
            let (l, a) = task.evaluate_query(p)?;
            trace.query_loss.push(l);
            trace.query_accuracy.push(a);
        }
        Ok(())
    };
    record(&current, &mut trace)?;
    for step in 0..cfg.steps {
        let range = batches[step % batches.len()].clone();
        let (l, nodes) = at_step(step, value_step(task, &mut current, cfg, &train, loss, range, step))?;
        trace.support_loss.push(l);
        trace.peak_tape_nodes = trace.peak_tape_nodes.max(nodes);
        record(&current, &mut trace)?;
    }
    Ok((current, trace))
}

/// Runs `cfg.steps` plain gradient-descent steps on the support loss over
/// the trainable partitions. With `record_query` the query loss and accuracy
/// are evaluated before the first step and after each step.
pub fn adapt<T: Task + ?Sized>(
    params: &ParamSet,
    task: &T,
    cfg: &InnerLoopConfig,
    record_query: bool,
) -> Result<(ParamSet, AdaptationTrace)> {
    adapt_with(params, task, cfg, InnerLoss::Support, record_query)
}

/// Unrolls the inner loop on `tape`, keeping every adapted parameter a
/// differentiable function of `init`. `after_step` sees the parameters
/// after each step (1-based).
pub(crate) fn unroll<T: Task + ?Sized>(
    tape: &mut Tape,
    task: &T,
    init: &[Var],
    train: &[usize],
    cfg: &InnerLoopConfig,
    mut after_step: impl FnMut(&mut Tape, &[Var], usize) -> Result<()>,
) -> Result<Vec<Var>> {
    let batches = support_batches(task.support_len(), cfg.batch_size);
    let mut phi = init.to_vec();
    for step in 0..cfg.steps {
        let range = batches[step % batches.len()].clone();
        at_step(step, {
            let run = || -> Result<()> {
                let l = task.support_loss(tape, &phi, range)?;
                check_loss(tape, l, "support loss", step)?;
                let wrt: Vec<Var> = train.iter().map(|&i| phi[i]).collect();
                let grads = tape.grad(l, &wrt, true)?;
                check_grads(tape, &grads, step)?;
                for (&i, &g) in train.iter().zip(&grads) {
                    let delta = tape.scale(g, cfg.alpha)?;
                    phi[i] = tape.sub(phi[i], delta)?;
                }
                Ok(())
            };
            run()
        })?;
        at_step(step + 1, after_step(tape, &phi, step + 1))?;
    }
    Ok(phi)
}
