use super::inner::{adapt_with, at_step, check_loss, unroll, InnerLoss};
use super::{trainable, Algorithm, InnerLoopConfig, MetaUpdateConfig, Task};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::ParamSet;

/// Flat meta-gradient over all parameters (zeros outside the trainable
/// partitions) with the query loss at the adapted parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGradient {
    pub grad: Vec<f64>,
    pub query_loss: f64,
    /// Largest tape retained while computing the gradient.
    pub peak_tape_nodes: usize,
}

fn flatten(params: &ParamSet, tape: &Tape, train: &[usize], grads: &[Var]) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.numel());
    let mut next = train.iter().zip(grads).peekable();
    for (i, e) in params.entries().iter().enumerate() {
        match next.peek() {
            Some(&(&j, &g)) if j == i => {
                out.extend_from_slice(tape.value(g).data());
                next.next();
            }
            _ => out.extend(std::iter::repeat_n(0.0, e.value.numel())),
        }
    }
    out
}

/// Exact gradient of the query loss at the adapted parameters with respect
/// to the initial parameters, differentiating through the unrolled inner loop.
pub fn meta_gradient_maml<T: Task + ?Sized>(params: &ParamSet, task: &T, cfg: &InnerLoopConfig) -> Result<MetaGradient> {
    cfg.validate()?;
    let train = trainable(params, cfg.mask);
    let mut tape = Tape::new();
    let init = params.to_vars(&mut tape, cfg.mask)?;
    let phi = unroll(&mut tape, task, &init, &train, cfg, |_, _, _| Ok(()))?;
    let lq = at_step(cfg.steps, task.query_loss(&mut tape, &phi))?;
    check_loss(&tape, lq, "query loss", cfg.steps)?;
    let wrt: Vec<Var> = train.iter().map(|&i| init[i]).collect();
    let grads = tape.grad(lq, &wrt, false)?;
    Ok(MetaGradient {
        grad: flatten(params, &tape, &train, &grads),
        query_loss: tape.scalar(lq),
        peak_tape_nodes: tape.node_count(),
    })
}

/// Query-loss gradient at the adapted parameters, used as the gradient at
/// the initial parameters.
pub fn meta_gradient_fomaml<T: Task + ?Sized>(params: &ParamSet, task: &T, cfg: &InnerLoopConfig) -> Result<MetaGradient> {
    let (adapted, trace) = adapt_with(params, task, cfg, InnerLoss::Support, false)?;
    let train = trainable(params, cfg.mask);
    let mut tape = Tape::new();
    let vars = adapted.to_vars(&mut tape, cfg.mask)?;
    let lq = at_step(cfg.steps, task.query_loss(&mut tape, &vars))?;
    check_loss(&tape, lq, "query loss", cfg.steps)?;
    let wrt: Vec<Var> = train.iter().map(|&i| vars[i]).collect();
    let grads = tape.grad(lq, &wrt, false)?;
    Ok(MetaGradient {
        grad: flatten(params, &tape, &train, &grads),
        query_loss: tape.scalar(lq),
        peak_tape_nodes: trace.peak_tape_nodes.max(tape.node_count()),
    })
}

/// Gradient of `Σ_k w_k L_query(φᵏ)` over inner steps `k = 1..=steps`.
/// The reported query loss is the one after the last step.
pub fn meta_gradient_mslb<T: Task + ?Sized>(
    params: &ParamSet,
    task: &T,
    cfg: &InnerLoopConfig,
    weights: &[f64],
) -> Result<MetaGradient> {
    cfg.validate()?;
    if weights.len() != cfg.steps {
        return Err(Error::contract(format!(
            "{} step weights given for {} inner steps",
            weights.len(),
            cfg.steps
        )));
    }
    let train = trainable(params, cfg.mask);
    let mut tape = Tape::new();
    let init = params.to_vars(&mut tape, cfg.mask)?;
    let mut total: Option<Var> = None;
    let mut last_loss = f64::NAN;
    unroll(&mut tape, task, &init, &train, cfg, |tape, phi, step| {
        let w = weights[step - 1];
        if w == 0.0 && step < cfg.steps {
            return Ok(());
        }
        let lq = task.query_loss(tape, phi)?;
        check_loss(tape, lq, "query loss", step)?;
        last_loss = tape.scalar(lq);
        if w == 0.0 {
            return Ok(());
        }
        let term = tape.scale(lq, w)?;
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
        Ok(())
    })?;
    let wrt: Vec<Var> = train.iter().map(|&i| init[i]).collect();
    let grad = match total {
        Some(t) => {
            let grads = tape.grad(t, &wrt, false)?;
            flatten(params, &tape, &train, &grads)
        }
        None => vec![0.0; params.numel()],
    };
    Ok(MetaGradient {
        grad,
        query_loss: last_loss,
        peak_tape_nodes: tape.node_count(),
    })
}

/// Interpolates the initial parameters toward the adapted ones:
/// `(1 - ε) φ + ε φ'`. Returns the new parameters and the adapted ones.
pub fn reptile_update<T: Task + ?Sized>(
    params: &ParamSet,
    task: &T,
    cfg: &InnerLoopConfig,
    epsilon: f64,
    use_query: bool,
) -> Result<(ParamSet, ParamSet)> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::contract(format!("reptile epsilon must lie in (0, 1], got {epsilon}")));
    }
    let loss = if use_query { InnerLoss::Joint } else { InnerLoss::Support };
    let (adapted, _) = adapt_with(params, task, cfg, loss, false)?;
    let updated = interpolate(params, &adapted.flat(), epsilon)?;
    Ok((updated, adapted))
}

pub(crate) fn interpolate(params: &ParamSet, target: &[f64], epsilon: f64) -> Result<ParamSet> {
    let mixed: Vec<f64> = params
        .flat()
        .iter()
        .zip(target)
        .map(|(p, t)| (1.0 - epsilon) * p + epsilon * t)
        .collect();
    let mut out = params.clone();
    out.set_flat(&mixed)?;
    Ok(out)
}

/// Meta-gradient of the gradient-based algorithms. `outer_steps` selects the
/// annealed step weights for multi-step loss.
pub fn meta_gradient<T: Task + ?Sized>(
    params: &ParamSet,
    task: &T,
    inner: &InnerLoopConfig,
    meta: &MetaUpdateConfig,
    outer_steps: u64,
) -> Result<MetaGradient> {
    match meta.algorithm {
        Algorithm::Maml => meta_gradient_maml(params, task, inner),
        Algorithm::Fomaml => meta_gradient_fomaml(params, task, inner),
        Algorithm::Mslb => {
            let w = meta.step_weights(inner.steps, outer_steps)?;
            meta_gradient_mslb(params, task, inner, &w)
        }
        Algorithm::Reptile => Err(Error::contract("reptile has no meta-gradient; use reptile_update")),
    }
}
