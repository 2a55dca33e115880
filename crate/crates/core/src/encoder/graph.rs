use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Encoder, EncoderKind};
use crate::error::{Error, Result};
use crate::optim::AdamWConfig;
use crate::scalar::Scalar;
use crate::tokenize::{SpecialTokens, TokenizedInput};

const MASKED: f32 = -1e9;

/// Transformer hyperparameters; field names follow the usual `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    #[serde(default = "default_max_positions")]
    pub max_position_embeddings: usize,
    #[serde(default = "one")]
    pub type_vocab_size: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
    #[serde(default = "default_dropout")]
    pub hidden_dropout_prob: f64,
    #[serde(default = "default_dropout")]
    pub attention_probs_dropout_prob: f64,
    #[serde(default = "one")]
    pub pad_token_id: usize,
}

fn default_max_positions() -> usize {
    514
}
fn one() -> usize {
    1
}
fn default_eps() -> f64 {
    1e-5
}
fn default_dropout() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderSize {
    /// 12 layers, 768 hidden.
    Base,
    /// 2 layers, 64 hidden; for smoke runs on CPU.
    Tiny,
}

impl std::str::FromStr for EncoderSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(EncoderSize::Base),
            "tiny" => Ok(EncoderSize::Tiny),
            _ => Err(Error::InvalidArgument(format!("unknown encoder size {s:?}"))),
        }
    }
}

impl EncoderConfig {
    pub fn preset(size: EncoderSize, vocab_size: usize) -> Self {
        let (hidden, layers, heads, inter) = match size {
            EncoderSize::Base => (768, 12, 12, 3072),
            EncoderSize::Tiny => (64, 2, 4, 128),
        };
        EncoderConfig {
            vocab_size,
            hidden_size: hidden,
            num_hidden_layers: layers,
            num_attention_heads: heads,
            intermediate_size: inter,
            max_position_embeddings: default_max_positions(),
            type_vocab_size: 1,
            layer_norm_eps: default_eps(),
            hidden_dropout_prob: default_dropout(),
            attention_probs_dropout_prob: default_dropout(),
            pad_token_id: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_attention_heads == 0 || self.hidden_size % self.num_attention_heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden_size, self.num_attention_heads
            )));
        }
        if self.max_position_embeddings < 3 {
            return Err(Error::Config("max_position_embeddings must be at least 3".into()));
        }
        Ok(())
    }

    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (h, i) = (self.hidden_size, self.intermediate_size);
        let mut v = vec![
            ("embeddings.word_embeddings.weight".into(), vec![self.vocab_size, h]),
            ("embeddings.position_embeddings.weight".into(), vec![self.max_position_embeddings, h]),
            ("embeddings.token_type_embeddings.weight".into(), vec![self.type_vocab_size, h]),
            ("embeddings.LayerNorm.weight".into(), vec![h]),
            ("embeddings.LayerNorm.bias".into(), vec![h]),
        ];
        for l in 0..self.num_hidden_layers {
            let p = format!("encoder.layer.{l}");
            for (name, out, inp) in [
                ("attention.self.query", h, h),
                ("attention.self.key", h, h),
                ("attention.self.value", h, h),
                ("attention.output.dense", h, h),
                ("intermediate.dense", i, h),
                ("output.dense", h, i),
            ] {
                v.push((format!("{p}.{name}.weight"), vec![out, inp]));
                v.push((format!("{p}.{name}.bias"), vec![out]));
            }
            for ln in ["attention.output.LayerNorm", "output.LayerNorm"] {
                v.push((format!("{p}.{ln}.weight"), vec![h]));
                v.push((format!("{p}.{ln}.bias"), vec![h]));
            }
        }
        v
    }
}

/// RoBERTa-style encoder with graph-guided attention over data-flow nodes.
pub struct GraphCodeEncoder {
    pub config: EncoderConfig,
    pub kind: EncoderKind,
    special: SpecialTokens,
    device: Device,
    /// Parameter order is the order of `config.param_shapes()`.
    names: Vec<String>,
    vars: Vec<Var>,
    optimizer: AdamW,
    pending: Option<Tensor>,
}

impl std::fmt::Debug for GraphCodeEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GraphCodeEncoder")
            .field("kind", &self.kind)
            .field("config", &self.config)
            .finish()
    }
}

pub fn default_device() -> Device {
    #[cfg(feature = "cuda")]
    {
        if let Ok(d) = Device::new_cuda(0) {
            return d;
        }
    }
    Device::Cpu
}

fn adamw_params(c: AdamWConfig) -> ParamsAdamW {
    ParamsAdamW {
        lr: 0.0,
        beta1: c.beta1,
        beta2: c.beta2,
        eps: c.eps,
        weight_decay: c.weight_decay,
    }
}

/// Maps common checkpoint naming variants onto ours.
fn normalize_name(name: &str) -> Option<String> {
    let mut n = name;
    for prefix in ["roberta.", "bert.", "model.", "encoder.roberta."] {
        if let Some(rest) = n.strip_prefix(prefix) {
            n = rest;
        }
    }
    if !(n.starts_with("embeddings.") || n.starts_with("encoder.layer.")) {
        return None;
    }
    let n = n
        .replace("LayerNorm.gamma", "LayerNorm.weight")
        .replace("LayerNorm.beta", "LayerNorm.bias");
    Some(n)
}

impl GraphCodeEncoder {
    /// Fresh weights: normal(0, 0.02) matrices, zero biases, unit norms.
    pub fn init(
        config: EncoderConfig,
        kind: EncoderKind,
        special: SpecialTokens,
        seed: u64,
        optim: AdamWConfig,
        device: Device,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, 0.02).expect("valid std");
        let mut tensors = BTreeMap::new();
        for (name, shape) in config.param_shapes() {
            let numel: usize = shape.iter().product();
            let data: Vec<f32> = if name.contains("LayerNorm.weight") {
                vec![1.0; numel]
            } else if shape.len() == 1 {
                vec![0.0; numel]
            } else {
                (0..numel).map(|_| normal.sample(&mut rng)).collect()
            };
            let mut t = Tensor::from_vec(data, shape.as_slice(), &device)?;
            if name == "embeddings.word_embeddings.weight" && config.pad_token_id < config.vocab_size {
                t = zero_row(&t, config.pad_token_id)?;
            }
            tensors.insert(name, t);
        }
        Self::from_tensors(config, kind, special, tensors, optim, device)
    }

    fn from_tensors(
        config: EncoderConfig,
        kind: EncoderKind,
        special: SpecialTokens,
        mut tensors: BTreeMap<String, Tensor>,
        optim: AdamWConfig,
        device: Device,
    ) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut vars = Vec::new();
        for (name, shape) in config.param_shapes() {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing weight {name}")))?;
            if t.dims() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "weight {name} has shape {:?}, expected {shape:?}",
                    t.dims()
                )));
            }
            let t = t.to_dtype(DType::F32)?.to_device(&device)?;
            let finite = t.flatten_all()?.to_vec1::<f32>()?.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::Checkpoint(format!("weight {name} has non-finite values")));
            }
            names.push(name);
            vars.push(Var::from_tensor(&t)?);
        }
        let optimizer = AdamW::new(vars.clone(), adamw_params(optim))?;
        Ok(GraphCodeEncoder {
            config,
            kind,
            special,
            device,
            names,
            vars,
            optimizer,
            pending: None,
        })
    }

    /// Loads `config.json` plus `model.safetensors` or `pytorch_model.bin`.
    pub fn load(
        dir: &Path,
        kind: EncoderKind,
        special: SpecialTokens,
        optim: AdamWConfig,
        device: Device,
    ) -> Result<Self> {
        let cfg_path = dir.join("config.json");
        let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let config: EncoderConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", cfg_path.display())))?;
        let st = dir.join("model.safetensors");
        let pt = dir.join("pytorch_model.bin");
        let raw: Vec<(String, Tensor)> = if st.exists() {
            candle_core::safetensors::load(&st, &Device::Cpu)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", st.display())))?
                .into_iter()
                .collect()
        } else if pt.exists() {
            candle_core::pickle::read_all(&pt)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", pt.display())))?
        } else {
            return Err(Error::Checkpoint(format!(
                "no model.safetensors or pytorch_model.bin in {}",
                dir.display()
            )));
        };
        let tensors = raw
            .into_iter()
            .filter_map(|(k, t)| normalize_name(&k).map(|k| (k, t)))
            .collect();
        Self::from_tensors(config, kind, special, tensors, optim, device)
    }

    /// Writes `config.json` and `model.safetensors`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let cfg_path = dir.join("config.json");
        let text = serde_json::to_string_pretty(&self.config)?;
        std::fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;
        let map: HashMap<String, Tensor> = self
            .names
            .iter()
            .cloned()
            .zip(self.vars.iter().map(|v| v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&map, dir.join("model.safetensors"))?;
        Ok(())
    }

    pub fn special(&self) -> SpecialTokens {
        self.special
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.iter().map(|v| v.elem_count()).sum()
    }

    fn params(&self, detach: bool) -> HashMap<&str, Tensor> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.vars.iter().map(|v| {
                if detach {
                    v.as_tensor().detach()
                } else {
                    v.as_tensor().clone()
                }
            }))
            .collect()
    }

    /// `[CLS]` hidden states for a batch, shape `[B, H]`.
    fn forward(&self, inputs: &[&TokenizedInput], mut dropout: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let h = self.config.hidden_size;
        let b = inputs.len();
        let w = self.params(dropout.is_none());
        let batch = BatchLayout::build(inputs, self.kind, self.special, &self.config)?;
        let l = batch.len;
        let ids = Tensor::from_vec(batch.ids, (b * l,), &self.device)?;
        let pos = Tensor::from_vec(batch.positions, (b * l,), &self.device)?;
        let word = w["embeddings.word_embeddings.weight"]
            .index_select(&ids, 0)?
            .reshape((b, l, h))?;
        let word = match batch.node_mix {
            Some(mix) => Tensor::from_vec(mix, (b, l, l), &self.device)?.matmul(&word)?,
            None => word,
        };
        let position = w["embeddings.position_embeddings.weight"]
            .index_select(&pos, 0)?
            .reshape((b, l, h))?;
        let token_type = w["embeddings.token_type_embeddings.weight"].get(0)?;
        let x = (word + position)?.broadcast_add(&token_type)?;
        let x = layer_norm(&x, &w, "embeddings.LayerNorm", self.config.layer_norm_eps)?;
        let mut x = self.dropout(x, self.config.hidden_dropout_prob, dropout.as_deref_mut())?;

        let bias = Tensor::from_vec(batch.bias, (b, 1, l, l), &self.device)?;
        let heads = self.config.num_attention_heads;
        let hd = h / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        for layer in 0..self.config.num_hidden_layers {
            let p = format!("encoder.layer.{layer}");
            let split = |t: Tensor| -> Result<Tensor> {
                Ok(t.reshape((b, l, heads, hd))?.transpose(1, 2)?.contiguous()?)
            };
            let q = split(linear(&x, &w, &format!("{p}.attention.self.query"))?)?;
            let k = split(linear(&x, &w, &format!("{p}.attention.self.key"))?)?;
            let v = split(linear(&x, &w, &format!("{p}.attention.self.value"))?)?;
            let scores = (q.matmul(&k.t()?)? * scale)?.broadcast_add(&bias)?;
            let probs = candle_nn::ops::softmax(&scores, D::Minus1)?;
            let probs = self.dropout(probs, self.config.attention_probs_dropout_prob, dropout.as_deref_mut())?;
            let ctx = probs.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, l, h))?;
            let attn = linear(&ctx, &w, &format!("{p}.attention.output.dense"))?;
            let attn = self.dropout(attn, self.config.hidden_dropout_prob, dropout.as_deref_mut())?;
            let x1 = layer_norm(&(attn + &x)?, &w, &format!("{p}.attention.output.LayerNorm"), self.config.layer_norm_eps)?;
            let inter = linear(&x1, &w, &format!("{p}.intermediate.dense"))?.gelu_erf()?;
            let out = linear(&inter, &w, &format!("{p}.output.dense"))?;
            let out = self.dropout(out, self.config.hidden_dropout_prob, dropout.as_deref_mut())?;
            x = layer_norm(&(out + x1)?, &w, &format!("{p}.output.LayerNorm"), self.config.layer_norm_eps)?;
        }
        Ok(x.narrow(1, 0, 1)?.squeeze(1)?)
    }

    fn dropout(&self, x: Tensor, p: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let Some(rng) = rng else { return Ok(x) };
        if p <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p) as f32;
        let mask: Vec<f32> = (0..x.elem_count())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), &self.device)?;
        Ok((x * mask)?)
    }

    fn to_array<T: Scalar>(t: &Tensor) -> Result<Array2<T>> {
        let (b, h) = t.dims2()?;
        let data: Vec<T> = t
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?
            .into_iter()
            .map(T::of)
            .collect();
        Array2::from_shape_vec((b, h), data).map_err(|e| Error::Shape(e.to_string()))
    }
}

fn zero_row(t: &Tensor, row: usize) -> Result<Tensor> {
    let (n, h) = t.dims2()?;
    let mut mask = vec![1f32; n];
    mask[row] = 0.0;
    let mask = Tensor::from_vec(mask, (n, 1), t.device())?;
    Ok(t.broadcast_mul(&mask)?.reshape((n, h))?)
}

fn linear(x: &Tensor, w: &HashMap<&str, Tensor>, name: &str) -> Result<Tensor> {
    let weight = &w[format!("{name}.weight").as_str()];
    let bias = &w[format!("{name}.bias").as_str()];
    Ok(x.broadcast_matmul(&weight.t()?)?.broadcast_add(bias)?)
}

fn layer_norm(x: &Tensor, w: &HashMap<&str, Tensor>, name: &str, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + eps)?.sqrt()?)?;
    let weight = &w[format!("{name}.weight").as_str()];
    let bias = &w[format!("{name}.bias").as_str()];
    Ok(normed.broadcast_mul(weight)?.broadcast_add(bias)?)
}

/// Flattened, padded model inputs for a batch.
struct BatchLayout {
    len: usize,
    ids: Vec<u32>,
    positions: Vec<u32>,
    /// Row-stochastic matrices averaging token embeddings into node slots;
    /// absent when no input in the batch has nodes.
    node_mix: Option<Vec<f32>>,
    /// Additive attention bias `[B, 1, L, L]`.
    bias: Vec<f32>,
}

impl BatchLayout {
    fn build(
        inputs: &[&TokenizedInput],
        kind: EncoderKind,
        special: SpecialTokens,
        config: &EncoderConfig,
    ) -> Result<Self> {
        let nodes_of = |t: &TokenizedInput| if kind.uses_dataflow() { t.nodes.len() } else { 0 };
        let len = inputs
            .iter()
            .map(|t| t.len() + nodes_of(t))
            .max()
            .unwrap_or(0);
        let b = inputs.len();
        let mut ids = vec![config.pad_token_id as u32; b * len];
        let mut positions = vec![1u32; b * len];
        let mut bias = vec![MASKED; b * len * len];
        let any_nodes = inputs.iter().any(|t| nodes_of(t) > 0);
        let mut mix = any_nodes.then(|| vec![0f32; b * len * len]);
        for (s, t) in inputs.iter().enumerate() {
            let n = t.len();
            let k = nodes_of(t);
            if n + 2 > config.max_position_embeddings {
                return Err(Error::InvalidArgument(format!(
                    "sequence of {n} tokens exceeds {} positions",
                    config.max_position_embeddings - 2
                )));
            }
            if let Some(&bad) = t.token_ids.iter().find(|&&id| id as usize >= config.vocab_size) {
                return Err(Error::InvalidArgument(format!(
                    "token id {bad} outside vocabulary of {}",
                    config.vocab_size
                )));
            }
            let row0 = s * len;
            for (j, &id) in t.token_ids.iter().enumerate() {
                ids[row0 + j] = id;
                positions[row0 + j] = 2 + j as u32;
            }
            for j in 0..k {
                ids[row0 + n + j] = special.unk;
                positions[row0 + n + j] = 0;
            }
            let at = |i: usize, j: usize| s * len * len + i * len + j;
            let total = n + k;
            for i in 0..n {
                let special_row = t.token_ids[i] == special.cls || t.token_ids[i] == special.sep;
                let cols = if special_row { total } else { n };
                for j in 0..cols {
                    bias[at(i, j)] = 0.0;
                }
            }
            if let Some(mix) = mix.as_mut() {
                for i in 0..n {
                    mix[at(i, i)] = 1.0;
                }
                for (j, span) in t.nodes.iter().enumerate().take(k) {
                    let node = n + j;
                    let share = 1.0 / span.len() as f32;
                    for p in span.clone() {
                        bias[at(node, p)] = 0.0;
                        bias[at(p, node)] = 0.0;
                        mix[at(node, p)] = share;
                    }
                }
                for &(u, d) in t.dfg_edges.iter().filter(|_| k > 0) {
                    if let (Some(nu), Some(nd)) = (t.node_at(u), t.node_at(d)) {
                        bias[at(n + nu, n + nd)] = 0.0;
                    }
                }
            }
        }
        Ok(BatchLayout {
            len,
            ids,
            positions,
            node_mix: mix,
            bias,
        })
    }
}

impl<T: Scalar> Encoder<T> for GraphCodeEncoder {
    type Input = TokenizedInput;
    type Snapshot = Vec<Tensor>;

    fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    fn embed(&self, inputs: &[&TokenizedInput]) -> Result<Array2<T>> {
        if inputs.is_empty() {
            return Ok(Array2::zeros((0, self.config.hidden_size)));
        }
        Self::to_array(&self.forward(inputs, None)?)
    }

    fn forward_train(&mut self, inputs: &[&TokenizedInput], seed: u64) -> Result<Array2<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cls = self.forward(inputs, Some(&mut rng))?;
        let out = Self::to_array(&cls)?;
        self.pending = Some(cls);
        Ok(out)
    }

    fn apply_gradient(&mut self, grad: &Array2<T>, lr: f64) -> Result<()> {
        let cls = self
            .pending
            .take()
            .ok_or_else(|| Error::InvalidArgument("apply_gradient without forward_train".into()))?;
        let g: Vec<f32> = grad.iter().map(|v| v.to_f64_lossy() as f32).collect();
        let g = Tensor::from_vec(g, grad.dim(), &self.device)?;
        let surrogate = (cls * g)?.sum_all()?;
        let grads = surrogate.backward()?;
        self.optimizer.set_learning_rate(lr);
        self.optimizer.step(&grads)?;
        Ok(())
    }

    fn snapshot(&self) -> Result<Vec<Tensor>> {
        Ok(self
            .vars
            .iter()
            .map(|v| v.as_tensor().copy())
            .collect::<candle_core::Result<_>>()?)
    }

    fn restore(&mut self, snapshot: &Vec<Tensor>) -> Result<()> {
        for (v, t) in self.vars.iter().zip(snapshot) {
            v.set(t)?;
        }
        self.pending = None;
        Ok(())
    }
}
