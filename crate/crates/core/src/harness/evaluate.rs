use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Run;
use crate::episodes::{Corpus, Episode};
use crate::error::{Error, Result};
use crate::meta::{adapt, EpisodeTask, InnerLoopConfig};
use crate::model::{ParamSet, PromptModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub index: usize,
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub episodes: Vec<EpisodeResult>,
    /// Mean query loss and accuracy before adaptation and after every step.
    pub curve: Vec<CurvePoint>,
    pub accuracy_mean: f64,
    /// Standard deviation of per-episode accuracy.
    pub accuracy_std: f64,
    pub loss_mean: f64,
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Adapts a copy of `params` to every episode and scores its query set.
pub fn evaluate_episodes(
    model: &PromptModel,
    corpus: &Corpus,
    params: &ParamSet,
    episodes: &[Episode],
    cfg: &InnerLoopConfig,
) -> Result<TestReport> {
    if episodes.is_empty() {
        return Err(Error::contract("no episodes to evaluate"));
    }
    model.check_params(params)?;
    let traces: Vec<Result<_>> = episodes
        .par_iter()
        .enumerate()
        .map(|(i, ep)| {
            let run = || {
                let task = EpisodeTask::new(model, ep, corpus)?;
                let (_, trace) = adapt(params, &task, cfg, true)?;
                Ok(trace)
            };
            run().map_err(|e: Error| e.in_episode(i))
        })
        .collect();
    let steps = cfg.steps + 1;
    let mut loss_sum = vec![0.0; steps];
    let mut acc_sum = vec![0.0; steps];
    let mut results = Vec::with_capacity(episodes.len());
    for (i, t) in traces.into_iter().enumerate() {
        let t = t?;
        for k in 0..steps {
            loss_sum[k] += t.query_loss[k];
            acc_sum[k] += t.query_accuracy[k];
        }
        results.push(EpisodeResult {
            index: i,
            accuracy: t.query_accuracy[steps - 1],
            loss: t.query_loss[steps - 1],
        });
    }
    let n = episodes.len() as f64;
    let curve = (0..steps)
        .map(|k| CurvePoint {
            step: k,
            loss: loss_sum[k] / n,
            accuracy: acc_sum[k] / n,
        })
        .collect();
    let accs: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let (accuracy_mean, accuracy_std) = mean_std(&accs);
    let loss_mean = results.iter().map(|r| r.loss).sum::<f64>() / n;
    Ok(TestReport {
        episodes: results,
        curve,
        accuracy_mean,
        accuracy_std,
        loss_mean,
    })
}

impl Run<'_> {
    /// Adaptation used at test time: `test.epochs` passes over the support
    /// set in `test.batch_size` minibatches.
    pub fn test_inner(&self) -> InnerLoopConfig {
        let support = self.cfg.episodes.way * self.cfg.episodes.shot;
        let batch = self.cfg.test.batch_size.min(support.max(1));
        let per_epoch = support.div_ceil(batch).max(1);
        InnerLoopConfig {
            steps: self.cfg.test.epochs * per_epoch,
            alpha: self.cfg.test.alpha.unwrap_or(self.cfg.inner.alpha),
            mask: self.cfg.inner.mask,
            batch_size: Some(batch),
        }
    }

    pub fn meta_test(&self, params: &ParamSet) -> Result<TestReport> {
        let episodes = self.test_episodes()?;
        evaluate_episodes(&self.model, &self.assets.corpus, params, &episodes, &self.test_inner())
    }

    /// Query accuracy after the training-time inner loop, averaged over episodes.
    pub fn validate(&self, params: &ParamSet, episodes: &[Episode]) -> Result<(f64, f64)> {
        let r = evaluate_episodes(&self.model, &self.assets.corpus, params, episodes, &self.cfg.inner)?;
        Ok((r.accuracy_mean, r.loss_mean))
    }
}
