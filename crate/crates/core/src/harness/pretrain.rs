use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::autodiff::{Tape, Var};
use crate::episodes::Corpus;
use crate::error::{Error, Result};
use crate::meta::OptimizerState;
use crate::model::{ParamSet, PartitionMask, PromptModel, Rendered, Source, Verbalizer, Vocab};

fn gradient_step(
    tape: &mut Tape,
    loss: Var,
    vars: &[Var],
    params: &mut ParamSet,
    mask: PartitionMask,
    cfg: &TrainConfig,
    state: &mut OptimizerState,
) -> Result<f64> {
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: "training loss",
            step: state.step as usize,
        });
    }
    let grads = tape.grad(loss, vars, false)?;
    let flat: Vec<f64> = grads.iter().flat_map(|&g| tape.value(g).data().to_vec()).collect();
    state.apply(&cfg.optimizer(), params, &flat, &params.flat_mask(mask))?;
    Ok(value)
}

/// `[CLS] before text after [SEP]` with position `pos` of the text replaced by `[MASK]`.
fn masked_sequence(text: &[usize], pos: usize, before: &[usize], after: &[usize]) -> Rendered {
    let mut sources = Vec::with_capacity(text.len() + before.len() + after.len() + 2);
    sources.push(Source::Token(Vocab::CLS_ID));
    sources.extend(before.iter().map(|&t| Source::Token(t)));
    let mask_pos = sources.len() + pos;
    sources.extend(text.iter().map(|&t| Source::Token(t)));
    sources.extend(after.iter().map(|&t| Source::Token(t)));
    sources.push(Source::Token(Vocab::SEP_ID));
    sources[mask_pos] = Source::Token(Vocab::MASK_ID);
    Rendered { sources, mask_pos }
}

/// Masked-token pretraining of the backbone on unlabeled corpus texts.
/// Each text is placed at a random offset among `filler` tokens so that every
/// position up to `max_len` is trained. Returns the updated parameters and the
/// per-step loss.
pub fn pretrain_backbone(
    model: &PromptModel,
    params: &ParamSet,
    corpus: &Corpus,
    filler: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ParamSet, Vec<f64>)> {
    model.check_params(params)?;
    let max_len = model.spec().backbone.max_len;
    if max_len < 3 {
        return Err(Error::contract("masked pretraining needs max_len >= 3"));
    }
    let texts: Vec<&[usize]> = corpus
        .examples
        .iter()
        .map(|e| e.tokens.as_slice())
        .filter(|t| !t.is_empty())
        .collect();
    if texts.is_empty() {
        return Err(Error::contract("corpus has no texts to pretrain on"));
    }
    let mask = PartitionMask {
        backbone: true,
        prompt: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = params.clone();
    let mut state = OptimizerState::new(params.numel());
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        let mut targets = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let full = texts[rng.random_range(0..texts.len())];
            let budget = max_len - 2;
            let text = &full[..full.len().min(budget)];
            let pad = if filler.is_empty() {
                0
            } else {
                rng.random_range(0..=budget - text.len())
            };
            let lead = rng.random_range(0..=pad);
            let mut draw = |n: usize| -> Vec<usize> { (0..n).map(|_| filler[rng.random_range(0..filler.len())]).collect() };
            let before = draw(lead);
            let after = draw(pad - lead);
            let pos = rng.random_range(0..text.len());
            targets.push(text[pos]);
            batch.push(masked_sequence(text, pos, &before, &after));
        }
        let mut tape = Tape::new();
        let vars = params.to_vars(&mut tape, mask)?;
        let logits = model.logits_rendered(&mut tape, &vars, &batch)?;
        let loss = tape.cross_entropy_with_logits(logits, &targets)?;
        losses.push(gradient_step(&mut tape, loss, &vars, &mut params, mask, cfg, &mut state)?);
    }
    Ok((params, losses))
}

/// Supervised prompt tuning on the pooled examples of `labels`, all labels
/// sharing one verbalizer. Returns the tuned parameters and per-step losses.
pub fn pretrain_prompt(
    model: &PromptModel,
    params: &ParamSet,
    corpus: &Corpus,
    labels: &[usize],
    mask: PartitionMask,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ParamSet, Vec<f64>)> {
    model.check_params(params)?;
    let mut local = vec![None; corpus.num_labels()];
    for (j, &l) in labels.iter().enumerate() {
        local[l] = Some(j);
    }
    let pool: Vec<(&[usize], usize)> = corpus
        .examples
        .iter()
        .filter_map(|e| local[e.label].map(|j| (e.tokens.as_slice(), j)))
        .collect();
    if pool.is_empty() {
        return Err(Error::contract("pooled source split has no examples"));
    }
    let verbalizer: Verbalizer = corpus.verbalizer(labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = params.clone();
    let mut state = OptimizerState::new(params.numel());
    let mut losses = Vec::with_capacity(cfg.steps);
    let batch = cfg.batch_size.min(pool.len());
    for _ in 0..cfg.steps {
        let picked = index::sample(&mut rng, pool.len(), batch);
        let texts: Vec<&[usize]> = picked.iter().map(|i| pool[i].0).collect();
        let gold: Vec<usize> = picked.iter().map(|i| pool[i].1).collect();
        let mut tape = Tape::new();
        let vars = params.to_vars(&mut tape, mask)?;
        let loss = model.task_loss(&mut tape, &vars, &texts, &gold, &verbalizer)?;
        losses.push(gradient_step(&mut tape, loss, &vars, &mut params, mask, cfg, &mut state)?);
    }
    Ok((params, losses))
}
