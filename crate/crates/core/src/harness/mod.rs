//! Meta-train / meta-test loops and the comparison suite.

mod config;
mod evaluate;
mod pretrain;
mod suite;
mod train;

use serde::{Deserialize, Serialize};

use crate::episodes::{
    generate_synthetic_corpus, load_jsonl, ANCHOR_WORDS, make_splits, Corpus, Episode, EpisodeSampler, Split, SplitSpec, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamSet, PromptModel, PromptTemplate};

pub use config::{
    derive_seed, DataConfig, DataSource, EpisodeConfig, InitMode, MetaTrainConfig, ModelConfig, RunConfig, SplitConfig,
    SuiteConfig, TestConfig, TrainConfig,
};
pub use evaluate::{evaluate_episodes, CurvePoint, EpisodeResult, TestReport};
pub use pretrain::{pretrain_backbone, pretrain_prompt};
pub use suite::{check_pairing, run_experiment_suite, AlgorithmRow, InitRow, SuiteReport, SuiteSummary};
pub use train::{EpochRecord, TrainerState};

/// Corpus, splits and pretrained backbone shared by every run of a configuration.
#[derive(Debug, Clone)]
pub struct Assets {
    pub corpus: Corpus,
    pub split: SplitSpec,
    pub spec: ModelSpec,
    /// Parameters holding the pretrained backbone; prompt entries are placeholders.
    pub backbone: ParamSet,
    pub backbone_losses: Vec<f64>,
}

pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    match cfg.data.source {
        DataSource::Synthetic => generate_synthetic_corpus(&cfg.data.synthetic, cfg.data.seed),
        DataSource::Jsonl => {
            let path = cfg.data.path.as_ref().ok_or_else(|| Error::Config {
                key: "data.path".into(),
                detail: "missing".into(),
            })?;
            load_jsonl(path, &cfg.data.vocab)
        }
    }
}

/// Unlabeled texts for backbone pretraining.
pub fn pretraining_corpus(cfg: &RunConfig, corpus: &Corpus) -> Result<Corpus> {
    let n = cfg.data.pretrain_examples_per_label;
    if cfg.data.source != DataSource::Synthetic || n == 0 {
        return Ok(corpus.clone());
    }
    let spec = SyntheticSpec {
        examples_per_label: n,
        ..cfg.data.synthetic.clone()
    };
    let texts = generate_synthetic_corpus(&spec, derive_seed(cfg.data.seed, "pretrain-corpus"))?;
    if texts.vocab != corpus.vocab {
        return Err(Error::contract("pretraining corpus vocabulary differs from the task corpus"));
    }
    Ok(texts)
}

impl Assets {
    /// Loads the corpus, splits it and pretrains the backbone.
    pub fn prepare(cfg: &RunConfig) -> Result<Self> {
        let mut assets = Self::without_pretraining(cfg)?;
        let model = assets.model(&cfg.model.template)?;
        let start = model.init_params(0);
        let seed = derive_seed(cfg.model.backbone.seed, "backbone-pretrain");
        let texts = pretraining_corpus(cfg, &assets.corpus)?;
        let filler: Vec<usize> = ANCHOR_WORDS.iter().filter_map(|w| texts.vocab.id(w)).collect();
        let (params, losses) = pretrain_backbone(&model, &start, &texts, &filler, &cfg.backbone_pretrain, seed)?;
        assets.backbone = params;
        assets.backbone_losses = losses;
        Ok(assets)
    }

    /// Corpus, splits and a freshly initialized backbone.
    pub fn without_pretraining(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let corpus = load_corpus(cfg)?;
        let split = make_splits(&corpus, &cfg.split.request(), cfg.split.seed, cfg.episodes.way)?;
        let spec = ModelSpec {
            vocab_size: corpus.vocab.len(),
            soft_tokens: cfg.model.soft_tokens,
            backbone: cfg.model.backbone.clone(),
            prompt: cfg.model.prompt.clone(),
        };
        let mut assets = Assets {
            corpus,
            split,
            spec,
            backbone: ParamSet::new(),
            backbone_losses: Vec::new(),
        };
        assets.backbone = assets.model(&cfg.model.template)?.init_params(0);
        Ok(assets)
    }

    pub fn model(&self, template: &str) -> Result<PromptModel> {
        let t = PromptTemplate::parse(template, &self.corpus.vocab).map_err(|e| Error::Config {
            key: "model.template".into(),
            detail: e.to_string(),
        })?;
        PromptModel::new(self.spec.clone(), t)
    }

    pub fn sampler(&self, cfg: &RunConfig, split: Split) -> Result<EpisodeSampler<'_>> {
        EpisodeSampler::new(&self.corpus, self.split.labels(split), cfg.episodes.shape())
    }
}

/// One configuration bound to a template-specific model.
#[derive(Debug, Clone)]
pub struct Run<'a> {
    pub assets: &'a Assets,
    pub cfg: &'a RunConfig,
    pub model: PromptModel,
}

impl<'a> Run<'a> {
    pub fn new(assets: &'a Assets, cfg: &'a RunConfig) -> Result<Self> {
        Self::with_template(assets, cfg, &cfg.model.template)
    }

    pub fn with_template(assets: &'a Assets, cfg: &'a RunConfig, template: &str) -> Result<Self> {
        Ok(Run {
            assets,
            cfg,
            model: assets.model(template)?,
        })
    }

    /// Pretrained backbone with a prompt drawn from the run seed.
    pub fn random_init(&self) -> ParamSet {
        let mut p = self.assets.backbone.clone();
        self.model.init_prompt(&mut p, derive_seed(self.cfg.seed, "prompt"));
        p
    }

    /// Supervised prompt tuning on the pooled train split.
    pub fn pretrain_init(&self, start: &ParamSet) -> Result<ParamSet> {
        let (p, _) = pretrain_prompt(
            &self.model,
            start,
            &self.assets.corpus,
            &self.assets.split.train,
            self.cfg.inner.mask,
            &self.cfg.pretrain_init,
            derive_seed(self.cfg.seed, "pretrain-init"),
        )?;
        Ok(p)
    }

    pub fn test_episodes(&self) -> Result<Vec<Episode>> {
        let sampler = self.assets.sampler(self.cfg, Split::Test)?;
        Ok(sampler.stream(derive_seed(self.cfg.seed, "test"), self.cfg.test.episodes))
    }

    pub fn val_episodes(&self) -> Result<Vec<Episode>> {
        let sampler = self.assets.sampler(self.cfg, Split::Val)?;
        Ok(sampler.stream(derive_seed(self.cfg.seed, "val"), self.cfg.meta_train.val_episodes))
    }

    /// Initialization of the given mode, with training history for meta.
    pub fn init(&self, mode: InitMode) -> Result<(ParamSet, Vec<EpochRecord>)> {
        let random = self.random_init();
        match mode {
            InitMode::Random => Ok((random, Vec::new())),
            InitMode::Pretrain => Ok((self.pretrain_init(&random)?, Vec::new())),
            InitMode::Meta => {
                let state = self.meta_train(&random, None, |_| Ok(()))?;
                Ok((state.best_params, state.history))
            }
        }
    }
}

/// Everything reported for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub config_hash: String,
    pub init: InitMode,
    pub train: Vec<EpochRecord>,
    pub test: TestReport,
}

/// Initialize with `cfg.init`, then meta-test.
pub fn run_once(assets: &Assets, cfg: &RunConfig) -> Result<(ParamSet, RunMetrics)> {
    let run = Run::new(assets, cfg)?;
    let (params, train) = run.init(cfg.init)?;
    let test = run.meta_test(&params)?;
    Ok((
        params,
        RunMetrics {
            config_hash: cfg.hash()?,
            init: cfg.init,
            train,
            test,
        },
    ))
}
