use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::episodes::{EpisodeShape, SplitRequest, SyntheticSpec, VocabPolicy};
use crate::error::{Error, Result};
use crate::meta::{Algorithm, InnerLoopConfig, MetaUpdateConfig, OptimizerConfig};
use crate::model::{BackboneSpec, PromptSpec};

/// Where the soft prompt of a run starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Random,
    Pretrain,
    Meta,
}

impl InitMode {
    pub const ALL: [InitMode; 3] = [InitMode::Random, InitMode::Pretrain, InitMode::Meta];

    pub fn name(&self) -> &'static str {
        match self {
            InitMode::Random => "random",
            InitMode::Pretrain => "pretrain",
            InitMode::Meta => "meta",
        }
    }
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InitMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config {
                key: "init".into(),
                detail: format!("unknown init mode `{s}` (expected random, pretrain or meta)"),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub seed: u64,
    pub synthetic: SyntheticSpec,
    pub path: Option<PathBuf>,
    pub vocab: VocabPolicy,
    /// Unlabeled texts per label drawn for backbone pretraining (synthetic
    /// data only); 0 pretrains on the labeled corpus itself.
    pub pretrain_examples_per_label: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            seed: 7,
            synthetic: SyntheticSpec::default(),
            path: None,
            vocab: VocabPolicy::default(),
            pretrain_examples_per_label: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Explicit label lists; when all three are given the fractions are ignored.
    pub train_labels: Option<Vec<usize>>,
    pub val_labels: Option<Vec<usize>>,
    pub test_labels: Option<Vec<usize>>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            seed: 11,
            train_fraction: 0.5,
            val_fraction: 0.2,
            test_fraction: 0.3,
            train_labels: None,
            val_labels: None,
            test_labels: None,
        }
    }
}

impl SplitConfig {
    pub fn request(&self) -> SplitRequest {
        match (&self.train_labels, &self.val_labels, &self.test_labels) {
            (Some(train), Some(val), Some(test)) => SplitRequest::Explicit {
                train: train.clone(),
                val: val.clone(),
                test: test.clone(),
            },
            _ => SplitRequest::Fractions {
                train: self.train_fraction,
                val: self.val_fraction,
                test: self.test_fraction,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub template: String,
    pub soft_tokens: usize,
    pub backbone: BackboneSpec,
    pub prompt: PromptSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            template: "[CLS] {x} {soft:8} the topic is [MASK] . [SEP]".into(),
            soft_tokens: 8,
            backbone: BackboneSpec::default(),
            prompt: PromptSpec::default(),
        }
    }
}

/// Plain supervised training: backbone pretraining or pooled prompt tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 300,
            batch_size: 16,
            lr: 0.01,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub(crate) fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            beta: self.lr,
            beta_backbone: self.lr,
            weight_decay: self.weight_decay,
            weight_decay_backbone: self.weight_decay,
            ..OptimizerConfig::default()
        }
    }

    fn validate(&self, section: &str) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_error(format!("{section}.batch_size"), "must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(config_error(format!("{section}.lr"), "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub way: usize,
    pub shot: usize,
    pub query: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            way: 5,
            shot: 2,
            query: 4,
        }
    }
}

impl EpisodeConfig {
    pub fn shape(&self) -> EpisodeShape {
        EpisodeShape {
            way: self.way,
            shot: self.shot,
            query: self.query,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaTrainConfig {
    pub max_epochs: usize,
    pub episodes_per_epoch: usize,
    /// Episodes per outer step.
    pub meta_batch: usize,
    pub patience: usize,
    pub val_episodes: usize,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        MetaTrainConfig {
            max_epochs: 40,
            episodes_per_epoch: 40,
            meta_batch: 4,
            patience: 10,
            val_episodes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    pub episodes: usize,
    /// Full passes over the support set.
    pub epochs: usize,
    pub batch_size: usize,
    /// Adaptation rate; the inner-loop rate when unset.
    pub alpha: Option<f64>,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            episodes: 200,
            epochs: 5,
            batch_size: 16,
            alpha: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub seeds: Vec<u64>,
    pub templates: Vec<String>,
    pub algorithms: Vec<Algorithm>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seeds: vec![1, 2, 3],
            templates: vec![
                "[CLS] {x} {soft:8} the topic is [MASK] . [SEP]".into(),
                "[CLS] {soft:8} [MASK] : {x} [SEP]".into(),
                "[CLS] this news is about [MASK] {soft:8} {x} [SEP]".into(),
            ],
            algorithms: Algorithm::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub init: InitMode,
    /// Worker threads for episode-level parallelism; 0 uses all cores.
    pub threads: usize,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub episodes: EpisodeConfig,
    pub model: ModelConfig,
    pub backbone_pretrain: TrainConfig,
    pub pretrain_init: TrainConfig,
    pub inner: InnerLoopConfig,
    pub meta: MetaUpdateConfig,
    pub meta_train: MetaTrainConfig,
    pub test: TestConfig,
    pub suite: SuiteConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            out_dir: PathBuf::from("runs/default"),
            init: InitMode::Meta,
            threads: 0,
            data: DataConfig::default(),
            split: SplitConfig::default(),
            episodes: EpisodeConfig::default(),
            model: ModelConfig::default(),
            backbone_pretrain: TrainConfig {
                steps: 16000,
                batch_size: 32,
                lr: 0.01,
                weight_decay: 0.0,
            },
            pretrain_init: TrainConfig::default(),
            inner: InnerLoopConfig {
                alpha: 0.1,
                ..InnerLoopConfig::default()
            },
            meta: MetaUpdateConfig {
                optimizer: OptimizerConfig {
                    beta: 0.02,
                    ..OptimizerConfig::default()
                },
                ..MetaUpdateConfig::default()
            },
            meta_train: MetaTrainConfig::default(),
            test: TestConfig::default(),
            suite: SuiteConfig::default(),
        }
    }
}

fn overlay(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => overlay(b, t),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

pub(crate) fn config_error(key: impl Into<String>, detail: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        detail: detail.into(),
    }
}

impl RunConfig {
    /// Parses TOML laid over `RunConfig::default()`; errors name the offending key path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| config_error("<document>", e.to_string()))?;
        let mut merged = toml::Table::try_from(RunConfig::default()).map_err(|e| config_error("<defaults>", e.to_string()))?;
        overlay(&mut merged, user);
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(merged)).map_err(|e| {
            let path = e.path().to_string();
            config_error(if path == "." { "<root>".to_string() } else { path }, e.into_inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_error("<document>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.inner.validate()?;
        self.meta.validate()?;
        self.backbone_pretrain.validate("backbone_pretrain")?;
        self.pretrain_init.validate("pretrain_init")?;
        if self.meta_train.patience == 0 {
            return Err(config_error("meta_train.patience", "must be at least 1"));
        }
        if self.meta_train.meta_batch == 0 {
            return Err(config_error("meta_train.meta_batch", "must be at least 1"));
        }
        if self.test.epochs == 0 {
            return Err(config_error("test.epochs", "must be at least 1"));
        }
        if self.test.batch_size == 0 {
            return Err(config_error("test.batch_size", "must be positive"));
        }
        if let Some(a) = self.test.alpha {
            if !(a.is_finite() && a >= 0.0) {
                return Err(config_error("test.alpha", "must be finite and non-negative"));
            }
        }
        if self.data.source == DataSource::Jsonl && self.data.path.is_none() {
            return Err(config_error("data.path", "required when data.source = \"jsonl\""));
        }
        if self.inner.steps == 0 {
            return Err(config_error("inner.steps", "must be at least 1"));
        }
        Ok(())
    }

    /// Stable fingerprint of the resolved configuration, ignoring the output
    /// directory and thread count.
    pub fn hash(&self) -> Result<String> {
        let text = RunConfig {
            out_dir: PathBuf::new(),
            threads: 0,
            ..self.clone()
        }
        .to_toml()?;
        let digest = Sha256::digest(text.as_bytes());
        Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Independent sub-seed for the named purpose.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
