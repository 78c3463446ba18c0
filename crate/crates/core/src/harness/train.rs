use serde::{Deserialize, Serialize};

use super::{derive_seed, Run};
use crate::episodes::Split;
use crate::error::Result;
use crate::meta::{outer_step, EpisodeTask, OptimizerState};
use crate::model::ParamSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
}

/// Meta-training progress; enough to resume after any completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    /// Completed epochs.
    pub epoch: usize,
    pub params: ParamSet,
    pub best_params: ParamSet,
    pub best_val: f64,
    pub bad_epochs: usize,
    pub optimizer: OptimizerState,
    pub history: Vec<EpochRecord>,
    pub finished: bool,
}

impl TrainerState {
    pub fn new(start: &ParamSet) -> Self {
        TrainerState {
            epoch: 0,
            params: start.clone(),
            best_params: start.clone(),
            best_val: f64::NEG_INFINITY,
            bad_epochs: 0,
            optimizer: OptimizerState::new(start.numel()),
            history: Vec::new(),
            finished: false,
        }
    }
}

impl Run<'_> {
    /// Epochs of outer steps over freshly sampled train episodes with
    /// validation after each epoch. Keeps the best-validation parameters and
    /// stops after `patience` epochs without improvement. `on_epoch` runs
    /// after every completed epoch.
    pub fn meta_train(
        &self,
        start: &ParamSet,
        resume: Option<TrainerState>,
        mut on_epoch: impl FnMut(&TrainerState) -> Result<()>,
    ) -> Result<TrainerState> {
        self.model.check_params(start)?;
        let cfg = &self.cfg.meta_train;
        let sampler = self.assets.sampler(self.cfg, Split::Train)?;
        let val = self.val_episodes()?;
        let mut state = resume.unwrap_or_else(|| TrainerState::new(start));
        while !state.finished && state.epoch < cfg.max_epochs {
            let seed = derive_seed(self.cfg.seed, &format!("train/{}", state.epoch));
            let episodes = sampler.stream(seed, cfg.episodes_per_epoch);
            let mut losses = Vec::new();
            for chunk in episodes.chunks(cfg.meta_batch) {
                let tasks = chunk
                    .iter()
                    .map(|ep| EpisodeTask::new(&self.model, ep, &self.assets.corpus))
                    .collect::<Result<Vec<_>>>()?;
                let report = outer_step(&mut state.params, &tasks, &self.cfg.inner, &self.cfg.meta, &mut state.optimizer)?;
                losses.push(report.query_loss);
            }
            let train_loss = if losses.is_empty() {
                f64::NAN
            } else {
                losses.iter().sum::<f64>() / losses.len() as f64
            };
            let (val_accuracy, val_loss) = if val.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                self.validate(&state.params, &val)?
            };
            state.epoch += 1;
            state.history.push(EpochRecord {
                epoch: state.epoch,
                train_loss,
                val_accuracy,
                val_loss,
            });
            if val.is_empty() || val_accuracy > state.best_val {
                state.best_val = val_accuracy;
                state.best_params = state.params.clone();
                state.bad_epochs = 0;
            } else {
                state.bad_epochs += 1;
            }
            if state.bad_epochs >= cfg.patience || state.epoch >= cfg.max_epochs {
                state.finished = true;
            }
            on_epoch(&state)?;
        }
        state.finished = true;
        Ok(state)
    }
}
