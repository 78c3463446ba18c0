//! The cloze-style prompt classifier `f(φ, θ)`.
//!
//! A rendered prompt is embedded (input and anchor words from the token
//! table, soft positions from the encoded soft prompt), passed through the
//! mixer backbone, and read out at the `[MASK]` position against the tied
//! token embeddings. Label scores average the mask probabilities of each
//! label's answer tokens.

mod backbone;
mod encoder;
pub mod params;
pub mod template;
pub mod verbalizer;
pub mod vocab;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use params::{NamedTensor, ParamSet, Partition, PartitionMask};
pub use template::{PromptTemplate, Rendered, Slot, Source};
pub use verbalizer::Verbalizer;
pub use vocab::Vocab;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSpec {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Number of context-mixing layers.
    pub depth: usize,
    pub max_len: usize,
    /// Standard deviation of the token and position embeddings at init.
    pub embed_init: f64,
    pub seed: u64,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec {
            embed_dim: 16,
            hidden_dim: 32,
            depth: 1,
            max_len: 32,
            embed_init: 0.5,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSpec {
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub mlp_hidden: usize,
    /// Standard deviation of raw soft-token embeddings at init.
    pub soft_init: f64,
}

impl Default for PromptSpec {
    fn default() -> Self {
        PromptSpec {
            lstm_hidden: 16,
            lstm_layers: 2,
            mlp_hidden: 16,
            soft_init: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub vocab_size: usize,
    pub soft_tokens: usize,
    pub backbone: BackboneSpec,
    pub prompt: PromptSpec,
}

impl ModelSpec {
    /// Short hex digest identifying the parameter layout and init.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone)]
struct MixLayer {
    w_query: usize,
    w_key: usize,
    w_tok: usize,
    w_ctx: usize,
    bias: usize,
    w_back: usize,
}

#[derive(Debug, Clone)]
struct Gate {
    /// One input matrix per input part (raw embedding, or forward/backward state).
    w_in: Vec<usize>,
    w_hid: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct LstmDir {
    input: Gate,
    forget: Gate,
    cell: Gate,
    output: Gate,
}

#[derive(Debug, Clone)]
struct Encoder {
    raw: usize,
    layers: Vec<[LstmDir; 2]>,
    mlp_in: Vec<usize>,
    mlp_b1: usize,
    mlp_w2: usize,
    mlp_b2: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    tok_emb: usize,
    pos_emb: usize,
    mix: Vec<MixLayer>,
    head_w: usize,
    head_b: usize,
    vocab_bias: usize,
    encoder: Option<Encoder>,
}

/// The prompt classifier for one template.
#[derive(Debug, Clone)]
pub struct PromptModel {
    spec: ModelSpec,
    template: PromptTemplate,
    layout: Layout,
    template_params: ParamSet,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches")
    }

    /// Matrix with `1/sqrt(fan_in)` standard deviation.
    fn weight(&mut self, rows: usize, cols: usize) -> Tensor {
        self.normal(&[rows, cols], 1.0 / (rows as f64).sqrt())
    }
}

impl PromptModel {
    pub fn new(spec: ModelSpec, template: PromptTemplate) -> Result<Self> {
        if spec.backbone.embed_dim == 0 || spec.backbone.hidden_dim == 0 {
            return Err(Error::contract("embedding and hidden dims must be positive"));
        }
        if template.soft_count() != spec.soft_tokens {
            return Err(Error::contract(format!(
                "template has {} soft tokens, model spec declares {}",
                template.soft_count(),
                spec.soft_tokens
            )));
        }
        if template.fixed_len() >= spec.backbone.max_len {
            return Err(Error::contract("template leaves no room for input text"));
        }
        for slot in template.slots() {
            if let Slot::AnchorToken(id) = slot {
                if *id >= spec.vocab_size {
                    return Err(Error::contract(format!("anchor id {id} outside vocabulary")));
                }
            }
        }
        if spec.soft_tokens > 0 && (spec.prompt.lstm_layers == 0 || spec.prompt.lstm_hidden == 0) {
            return Err(Error::contract("soft prompts need at least one LSTM layer"));
        }
        let (layout, template_params) = Self::build(&spec);
        Ok(PromptModel {
            spec,
            template,
            layout,
            template_params,
        })
    }

    /// Builds the layout and a zero-valued parameter set with the final shapes.
    fn build(spec: &ModelSpec) -> (Layout, ParamSet) {
        let d = spec.backbone.embed_dim;
        let hid = spec.backbone.hidden_dim;
        let v = spec.vocab_size;
        let mut p = ParamSet::new();
        let bb = Partition::Backbone;
        let tok_emb = p.push("tok_emb", bb, Tensor::zeros(&[v, d]));
        let pos_emb = p.push("pos_emb", bb, Tensor::zeros(&[spec.backbone.max_len, d]));
        let mix = (0..spec.backbone.depth)
            .map(|i| MixLayer {
                w_query: p.push(format!("mix{i}.w_query"), bb, Tensor::zeros(&[d, d])),
                w_key: p.push(format!("mix{i}.w_key"), bb, Tensor::zeros(&[d, d])),
                w_tok: p.push(format!("mix{i}.w_tok"), bb, Tensor::zeros(&[d, hid])),
                w_ctx: p.push(format!("mix{i}.w_ctx"), bb, Tensor::zeros(&[d, hid])),
                bias: p.push(format!("mix{i}.bias"), bb, Tensor::zeros(&[1, hid])),
                w_back: p.push(format!("mix{i}.w_back"), bb, Tensor::zeros(&[hid, d])),
            })
            .collect();
        let head_w = p.push("head.w", bb, Tensor::zeros(&[d, d]));
        let head_b = p.push("head.bias", bb, Tensor::zeros(&[1, d]));
        let vocab_bias = p.push("head.vocab_bias", bb, Tensor::zeros(&[1, v]));

        let encoder = (spec.soft_tokens > 0).then(|| {
            let pr = Partition::Prompt;
            let h = spec.prompt.lstm_hidden;
            let raw = p.push("soft.raw", pr, Tensor::zeros(&[spec.soft_tokens, d]));
            let mut layers = Vec::new();
            for l in 0..spec.prompt.lstm_layers {
                let parts: Vec<usize> = if l == 0 { vec![d] } else { vec![h, h] };
                let dir = |name: &str, p: &mut ParamSet| {
                    let mut gate = |g: &str| Gate {
                        w_in: parts
                            .iter()
                            .enumerate()
                            .map(|(k, &rows)| {
                                p.push(format!("lstm{l}.{name}.{g}.w_in{k}"), pr, Tensor::zeros(&[rows, h]))
                            })
                            .collect(),
                        w_hid: p.push(format!("lstm{l}.{name}.{g}.w_hid"), pr, Tensor::zeros(&[h, h])),
                        bias: p.push(format!("lstm{l}.{name}.{g}.bias"), pr, Tensor::zeros(&[1, h])),
                    };
                    LstmDir {
                        input: gate("i"),
                        forget: gate("f"),
                        cell: gate("g"),
                        output: gate("o"),
                    }
                };
                let fwd = dir("fwd", &mut p);
                let bwd = dir("bwd", &mut p);
                layers.push([fwd, bwd]);
            }
            let mh = spec.prompt.mlp_hidden;
            let mlp_in = vec![
                p.push("mlp.w1_fwd", pr, Tensor::zeros(&[h, mh])),
                p.push("mlp.w1_bwd", pr, Tensor::zeros(&[h, mh])),
            ];
            Encoder {
                raw,
                layers,
                mlp_in,
                mlp_b1: p.push("mlp.b1", pr, Tensor::zeros(&[1, mh])),
                mlp_w2: p.push("mlp.w2", pr, Tensor::zeros(&[mh, d])),
                mlp_b2: p.push("mlp.b2", pr, Tensor::zeros(&[1, d])),
            }
        });

        (
            Layout {
                tok_emb,
                pos_emb,
                mix,
                head_w,
                head_b,
                vocab_bias,
                encoder,
            },
            p,
        )
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    /// Same parameter layout with a different template of equal soft count.
    pub fn with_template(&self, template: PromptTemplate) -> Result<Self> {
        Self::new(self.spec.clone(), template)
    }

    /// Fresh parameters: backbone from the backbone seed, prompt from `prompt_seed`.
    pub fn init_params(&self, prompt_seed: u64) -> ParamSet {
        let mut p = self.template_params.clone();
        self.init_backbone(&mut p);
        self.init_prompt(&mut p, prompt_seed);
        p
    }

    fn init_backbone(&self, p: &mut ParamSet) {
        let mut init = Init::new(self.spec.backbone.seed);
        let s = self.spec.backbone.embed_init;
        let l = &self.layout;
        let shape = |p: &ParamSet, i| p.get(i).shape().to_vec();
        *p.get_mut(l.tok_emb) = init.normal(&shape(p, l.tok_emb), s);
        *p.get_mut(l.pos_emb) = init.normal(&shape(p, l.pos_emb), s);
        for m in &l.mix {
            for i in [m.w_query, m.w_key, m.w_tok, m.w_ctx, m.w_back] {
                let sh = shape(p, i);
                *p.get_mut(i) = init.weight(sh[0], sh[1]);
            }
        }
        let sh = shape(p, l.head_w);
        *p.get_mut(l.head_w) = init.weight(sh[0], sh[1]);
    }

    /// Re-draws every prompt-partition tensor from `seed`, leaving the backbone untouched.
    pub fn init_prompt(&self, p: &mut ParamSet, seed: u64) {
        let Some(enc) = &self.layout.encoder else {
            return;
        };
        let mut init = Init::new(seed);
        let sh = p.get(enc.raw).shape().to_vec();
        *p.get_mut(enc.raw) = init.normal(&sh, self.spec.prompt.soft_init);
        let mut weights: Vec<usize> = Vec::new();
        for layer in &enc.layers {
            for dir in layer {
                for gate in [&dir.input, &dir.forget, &dir.cell, &dir.output] {
                    weights.extend(&gate.w_in);
                    weights.push(gate.w_hid);
                }
            }
        }
        weights.extend(&enc.mlp_in);
        weights.push(enc.mlp_w2);
        for i in weights {
            let sh = p.get(i).shape().to_vec();
            *p.get_mut(i) = init.weight(sh[0], sh[1]);
        }
        for layer in &enc.layers {
            for dir in layer {
                for gate in [&dir.input, &dir.forget, &dir.cell, &dir.output] {
                    *p.get_mut(gate.bias) = Tensor::zeros(p.get(gate.bias).shape());
                }
            }
        }
        *p.get_mut(enc.mlp_b1) = Tensor::zeros(p.get(enc.mlp_b1).shape());
        *p.get_mut(enc.mlp_b2) = Tensor::zeros(p.get(enc.mlp_b2).shape());
    }

    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        if !params.is_compatible(&self.template_params) {
            return Err(Error::contract("parameter set does not match the model layout"));
        }
        Ok(())
    }

    pub fn render(&self, text: &[usize]) -> Result<Rendered> {
        self.template.render(text, self.spec.backbone.max_len)
    }

    /// Encoded soft prompts `[m, d]`, or `None` for templates without soft tokens.
    pub fn encode_soft_prompts(&self, tape: &mut Tape, vars: &[Var]) -> Result<Option<Var>> {
        match &self.layout.encoder {
            None => Ok(None),
            Some(enc) => encoder::encode(tape, vars, enc).map(Some),
        }
    }

    /// Mask-position logits `[batch, vocab]` for already rendered sequences.
    pub fn logits_rendered(&self, tape: &mut Tape, vars: &[Var], batch: &[Rendered]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let soft = if batch
            .iter()
            .any(|r| r.sources.iter().any(|s| matches!(s, Source::Soft(_))))
        {
            self.encode_soft_prompts(tape, vars)?
        } else {
            None
        };
        backbone::logits(tape, vars, &self.layout, batch, soft)
    }

    /// Mask-position logits `[batch, vocab]` for raw token-id texts.
    pub fn logits(&self, tape: &mut Tape, vars: &[Var], texts: &[&[usize]]) -> Result<Var> {
        let rendered = texts
            .iter()
            .map(|t| self.render(t))
            .collect::<Result<Vec<_>>>()?;
        self.logits_rendered(tape, vars, &rendered)
    }

    /// Per-label mean answer probability `[batch, labels]`. Rows need not sum to one.
    pub fn label_probs(&self, tape: &mut Tape, logits: Var, verbalizer: &Verbalizer) -> Result<Var> {
        label_probs(tape, logits, verbalizer)
    }

    /// Mean negative log of the label-renormalized probability of the gold label.
    pub fn task_loss(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        texts: &[&[usize]],
        labels: &[usize],
        verbalizer: &Verbalizer,
    ) -> Result<Var> {
        let logits = self.logits(tape, vars, texts)?;
        let probs = label_probs(tape, logits, verbalizer)?;
        label_nll(tape, probs, labels)
    }

    /// Loss value and per-example predictions without recording gradients.
    pub fn evaluate(
        &self,
        params: &ParamSet,
        texts: &[&[usize]],
        labels: &[usize],
        verbalizer: &Verbalizer,
    ) -> Result<Evaluation> {
        let mut tape = Tape::new();
        let vars = params.to_vars(
            &mut tape,
            PartitionMask {
                backbone: false,
                prompt: false,
            },
        )?;
        let logits = self.logits(&mut tape, &vars, texts)?;
        let probs = label_probs(&mut tape, logits, verbalizer)?;
        let loss = label_nll(&mut tape, probs, labels)?;
        let predictions = predict(tape.value(probs));
        let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(Evaluation {
            loss: tape.scalar(loss),
            accuracy: correct as f64 / labels.len() as f64,
            predictions,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

pub fn label_probs(tape: &mut Tape, logits: Var, verbalizer: &Verbalizer) -> Result<Var> {
    let (_, v) = tape.value(logits).dims2("label_probs")?;
    let avg = tape.constant(verbalizer.averaging_matrix(v))?;
    let p = tape.softmax(logits)?;
    tape.matmul(p, avg)
}

/// `mean_i [log Σ_l p_il − log p_i,gold]` for label score rows `probs`.
pub fn label_nll(tape: &mut Tape, probs: Var, labels: &[usize]) -> Result<Var> {
    let (b, n) = tape.value(probs).dims2("label_nll")?;
    if labels.len() != b {
        return Err(Error::contract(format!("{b} rows but {} labels", labels.len())));
    }
    let mut onehot = vec![0.0; b * n];
    for (i, &l) in labels.iter().enumerate() {
        if l >= n {
            return Err(Error::contract(format!("label {l} outside the verbalizer's {n} labels")));
        }
        onehot[i * n + l] = 1.0;
    }
    let onehot = tape.constant(Tensor::matrix(b, n, onehot)?)?;
    let logp = tape.log(probs)?;
    let picked = tape.mul(logp, onehot)?;
    let picked = tape.sum_cols(picked)?;
    let total = tape.sum_cols(probs)?;
    let lognorm = tape.log(total)?;
    let nll = tape.sub(lognorm, picked)?;
    tape.mean(nll)
}

/// Argmax per row; the lowest label index wins ties.
pub fn predict(probs: &Tensor) -> Vec<usize> {
    let n = probs.shape().last().copied().unwrap_or(1).max(1);
    probs
        .data()
        .chunks(n)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests;
