//! Gradient oracle suites comparing analytic derivatives with finite differences.

mod primitives;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{hvp, Tape};
use crate::episodes::{generate_synthetic_corpus, Corpus, Episode, EpisodeSampler, EpisodeShape, SyntheticSpec};
use crate::error::Result;
use crate::gradcheck::{central_directional, central_gradient, relative_error, FD_STEP};
use crate::meta::{adapt, meta_gradient_maml, EpisodeTask, InnerLoopConfig, Task};
use crate::model::{BackboneSpec, ModelSpec, ParamSet, PartitionMask, PromptModel, PromptSpec, PromptTemplate};

/// Worst relative errors observed over a suite of randomized instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub instances: usize,
    pub max_first_order: f64,
    /// Hessian-vector products checked against differences of gradients.
    pub max_second_order: Option<f64>,
    /// Label of the instance with the largest first-order error.
    pub worst: String,
}

impl SuiteReport {
    fn new(name: &str) -> Self {
        SuiteReport {
            name: name.to_string(),
            instances: 0,
            max_first_order: 0.0,
            max_second_order: None,
            worst: String::new(),
        }
    }

    fn record(&mut self, label: String, first: f64, second: Option<f64>) {
        self.instances += 1;
        if first > self.max_first_order || self.worst.is_empty() {
            self.max_first_order = self.max_first_order.max(first);
            self.worst = label;
        }
        if let Some(s) = second {
            self.max_second_order = Some(self.max_second_order.map_or(s, |m: f64| m.max(s)));
        }
    }
}

/// Every primitive op, `instances_per_op` random inputs each.
pub fn primitive_suite(seed: u64, instances_per_op: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("primitives");
    for case in primitives::cases() {
        for i in 0..instances_per_op {
            let (first, second) = primitives::check_instance(&case, &mut rng)?;
            report.record(format!("{}#{i}", case.name), first, Some(second));
        }
    }
    Ok(report)
}

/// A randomly sized prompt model with one episode of a small synthetic corpus.
#[derive(Debug, Clone)]
pub struct TinySetup {
    pub model: PromptModel,
    pub corpus: Corpus,
    pub episode: Episode,
    pub params: ParamSet,
}

impl TinySetup {
    pub fn task(&self) -> Result<EpisodeTask<'_>> {
        EpisodeTask::new(&self.model, &self.episode, &self.corpus)
    }
}

/// Draws model and episode sizes until the model has at most `max_params` parameters.
pub fn random_tiny_setup(rng: &mut impl Rng, max_params: usize) -> Result<TinySetup> {
    let corpus = generate_synthetic_corpus(
        &SyntheticSpec {
            labels: 4,
            topic_words: 2,
            background_words: 3,
            examples_per_label: 4,
            min_len: 2,
            max_len: 4,
            function_words: 0.1,
            background: 0.3,
            overlap: 0.3,
        },
        rng.random(),
    )?;
    loop {
        let soft = rng.random_range(1..=3usize);
        let spec = ModelSpec {
            vocab_size: corpus.vocab.len(),
            soft_tokens: soft,
            backbone: BackboneSpec {
                embed_dim: rng.random_range(2..=4),
                hidden_dim: rng.random_range(2..=4),
                depth: rng.random_range(1..=2),
                max_len: 8 + soft,
                embed_init: 0.7,
                seed: rng.random(),
            },
            prompt: PromptSpec {
                lstm_hidden: rng.random_range(2..=3),
                lstm_layers: rng.random_range(1..=2),
                mlp_hidden: rng.random_range(2..=3),
                soft_init: 0.7,
            },
        };
        let template = PromptTemplate::parse(
            &format!("[CLS] {{x}} {{soft:{soft}}} the topic is [MASK] [SEP]"),
            &corpus.vocab,
        )?;
        let model = PromptModel::new(spec, template)?;
        let params = model.init_params(rng.random());
        if params.numel() > max_params {
            continue;
        }
        let shape = EpisodeShape {
            way: rng.random_range(2..=3),
            shot: rng.random_range(1..=2),
            query: rng.random_range(1..=2),
        };
        let episode = EpisodeSampler::new(&corpus, &[0, 1, 2, 3], shape)?.sample(rng);
        return Ok(TinySetup {
            model,
            corpus,
            episode,
            params,
        });
    }
}

/// Task-loss gradients and Hessian-vector products of random tiny prompt models.
pub fn task_loss_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("task_loss");
    for i in 0..instances {
        let setup = random_tiny_setup(&mut rng, 500)?;
        let task = setup.task()?;
        let params = &setup.params;
        let loss_at = |x: &[f64]| -> Result<f64> {
            let mut p = params.clone();
            p.set_flat(x)?;
            Ok(task.evaluate_query(&p)?.0)
        };
        let grad_at = |x: &[f64]| -> Result<Vec<f64>> {
            let mut p = params.clone();
            p.set_flat(x)?;
            let mut tape = Tape::new();
            let vars = p.to_vars(&mut tape, PartitionMask::ALL)?;
            let l = task.query_loss(&mut tape, &vars)?;
            let g = tape.grad(l, &vars, false)?;
            Ok(g.iter().flat_map(|&v| tape.value(v).data().to_vec()).collect())
        };
        let flat = params.flat();
        let first = relative_error(&grad_at(&flat)?, &central_gradient(loss_at, &flat, FD_STEP)?);

        let u: Vec<f64> = (0..flat.len()).map(|_| rng.sample(StandardNormal)).collect();
        let tensors: Vec<_> = params.entries().iter().map(|e| e.value.clone()).collect();
        let hv = hvp(|tape, vars| task.query_loss(tape, vars), &tensors, &u)?;
        let hv_fd = central_directional(grad_at, &flat, &u, FD_STEP)?;
        let second = relative_error(&hv, &hv_fd);
        report.record(format!("instance#{i} ({} params)", flat.len()), first, Some(second));
    }
    Ok(report)
}

/// MAML meta-gradients of random tiny prompt models against finite
/// differences of the adapt-then-query-loss map, with 1 to `max_steps` inner steps.
pub fn maml_suite(seed: u64, instances: usize, max_steps: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("maml");
    for i in 0..instances {
        let setup = random_tiny_setup(&mut rng, 500)?;
        let task = setup.task()?;
        let params = &setup.params;
        let cfg = InnerLoopConfig {
            steps: rng.random_range(1..=max_steps.max(1)),
            alpha: rng.random_range(0.05..0.5),
            mask: if i % 2 == 0 { PartitionMask::PROMPT_ONLY } else { PartitionMask::ALL },
            batch_size: None,
        };
        let g = meta_gradient_maml(params, &task, &cfg)?;
        let mask = params.flat_mask(cfg.mask);
        let idx: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
        let base = params.flat();
        let x0: Vec<f64> = idx.iter().map(|&j| base[j]).collect();
        let numeric = central_gradient(
            |x| {
                let mut flat = base.clone();
                for (&j, &v) in idx.iter().zip(x) {
                    flat[j] = v;
                }
                let mut p = params.clone();
                p.set_flat(&flat)?;
                let (a, _) = adapt(&p, &task, &cfg, false)?;
                Ok(task.evaluate_query(&a)?.0)
            },
            &x0,
            FD_STEP,
        )?;
        let analytic: Vec<f64> = idx.iter().map(|&j| g.grad[j]).collect();
        let err = relative_error(&analytic, &numeric);
        report.record(
            format!("instance#{i} (k={}, {} params)", cfg.steps, params.numel()),
            err,
            None,
        );
    }
    Ok(report)
}
