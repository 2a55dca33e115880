//! Stage 2: classification head, binary cross-entropy and fine-tuning.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainingConfig;
use crate::corpus::{shuffled_plan, Label};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::eval::compute_metrics;
use crate::nn::{relu, relu_backward, sigmoid, Linear, LinearGrad};
use crate::optim::{AdamW, LinearSchedule, ParamRef};
use crate::scalar::Scalar;
use crate::train::{check_finite, check_finite_output, plan_indices, step_seed, Example, LogRow, TrainingLog};

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Mlp,
    Linear,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Mlp => "mlp",
            HeadKind::Linear => "linear",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(HeadKind::Mlp),
            "linear" => Ok(HeadKind::Linear),
            _ => Err(Error::InvalidArgument(format!("unknown head kind {s:?}"))),
        }
    }
}

/// MLP (`h → ReLU → 1`) or single affine map, followed by a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<T> {
    pub kind: HeadKind,
    /// One layer for `Linear`, two for `Mlp`.
    pub layers: Vec<Linear<T>>,
}

pub struct HeadCache<T> {
    input: Array2<T>,
    pre: Option<Array2<T>>,
    act: Option<Array2<T>>,
}

impl<T: Scalar> ClassifierHead<T> {
    pub fn init(kind: HeadKind, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let layers = match kind {
            HeadKind::Mlp => vec![Linear::init(input, hidden, rng), Linear::init(hidden, 1, rng)],
            HeadKind::Linear => vec![Linear::init(input, 1, rng)],
        };
        ClassifierHead { kind, layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn logits(&self, h: ArrayView2<T>) -> Result<(Array1<T>, HeadCache<T>)> {
        if h.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "classifier head expects {} inputs, got {}",
                self.input_dim(),
                h.ncols()
            )));
        }
        let (out, pre, act) = match self.kind {
            HeadKind::Linear => (self.layers[0].forward(h), None, None),
            HeadKind::Mlp => {
                let pre = self.layers[0].forward(h);
                let act = relu(&pre);
                (self.layers[1].forward(act.view()), Some(pre), Some(act))
            }
        };
        let cache = HeadCache {
            input: h.to_owned(),
            pre,
            act,
        };
        Ok((out.index_axis_move(Axis(1), 0), cache))
    }

    /// Probabilities of the AI class, kept inside the open unit interval.
    pub fn probabilities(&self, h: ArrayView2<T>) -> Result<Array1<T>> {
        let (lo, hi) = (T::of(PROB_CLAMP), T::of(1.0 - PROB_CLAMP));
        Ok(self.logits(h)?.0.mapv(|z| sigmoid(z).max(lo).min(hi)))
    }

    pub fn backward(&self, cache: &HeadCache<T>, grad_logits: &Array1<T>) -> (Vec<LinearGrad<T>>, Array2<T>) {
        let g = grad_logits.view().insert_axis(Axis(1));
        match self.kind {
            HeadKind::Linear => {
                let (g0, gh) = self.layers[0].backward(cache.input.view(), g);
                (vec![g0], gh)
            }
            HeadKind::Mlp => {
                let act = cache.act.as_ref().expect("mlp cache");
                let pre = cache.pre.as_ref().expect("mlp cache");
                let (g1, g_act) = self.layers[1].backward(act.view(), g);
                let g_pre = relu_backward(pre, &g_act);
                let (g0, gh) = self.layers[0].backward(cache.input.view(), g_pre.view());
                (vec![g0, g1], gh)
            }
        }
    }

    pub fn params<'a>(&'a mut self, grads: &'a [LinearGrad<T>]) -> Vec<ParamRef<'a, T>> {
        self.layers
            .iter_mut()
            .zip(grads)
            .flat_map(|(l, g)| l.params(g))
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            l.save(dir, &format!("classifier.layer{}", i + 1))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, kind: HeadKind) -> Result<Self> {
        let n = match kind {
            HeadKind::Mlp => 2,
            HeadKind::Linear => 1,
        };
        let layers = (1..=n)
            .map(|i| Linear::load(dir, &format!("classifier.layer{i}")))
            .collect::<Result<Vec<_>>>()?;
        if layers.last().is_some_and(|l| l.fan_out() != 1)
            || layers.windows(2).any(|w| w[0].fan_out() != w[1].fan_in())
        {
            return Err(Error::Checkpoint("classifier layer shapes do not chain".into()));
        }
        Ok(ClassifierHead { kind, layers })
    }
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss<T: Scalar>(p: &[T], y: &[Label]) -> Result<T> {
    if p.len() != y.len() {
        return Err(Error::Shape(format!("{} probabilities but {} labels", p.len(), y.len())));
    }
    if p.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let (lo, hi) = (T::of(PROB_CLAMP), T::of(1.0 - PROB_CLAMP));
    let total: T = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.max(lo).min(hi);
            match y {
                Label::Ai => -p.ln(),
                Label::Human => -(T::one() - p).ln(),
            }
        })
        .sum();
    Ok(total / T::of(p.len() as f64))
}

/// Loss from logits, with its gradient with respect to the logits.
pub fn bce_with_logits_grad<T: Scalar>(logits: &Array1<T>, y: &[Label]) -> Result<(T, Array1<T>)> {
    let p: Vec<T> = logits.iter().map(|&z| sigmoid(z)).collect();
    let loss = bce_loss(&p, y)?;
    let n = T::of(p.len() as f64);
    let (lo, hi) = (T::of(PROB_CLAMP), T::of(1.0 - PROB_CLAMP));
    let grad = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            if p < lo || p > hi {
                T::zero()
            } else {
                (p - T::of(y.index() as f64)) / n
            }
        })
        .collect();
    Ok((loss, grad))
}

/// Verdict for one snippet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    /// Probability of the AI-generated class.
    pub probability: f64,
    pub label: Label,
    pub threshold: f64,
    pub degraded_dfg: bool,
    pub model_version: String,
}

pub fn label_for(probability: f64, threshold: f64) -> Label {
    if probability >= threshold {
        Label::Ai
    } else {
        Label::Human
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage2Report {
    pub log: TrainingLog,
    /// Dev macro-F1 after each epoch; empty without a dev split.
    pub dev_macro_f1: Vec<f64>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub dev_ids: Vec<String>,
}

/// Seeded, per-class holdout of `fraction` of the examples.
pub fn dev_split<I>(examples: &[Example<I>], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD5);
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for label in Label::ALL {
        let mut idx: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].label == label).collect();
        idx.shuffle(&mut rng);
        let k = (idx.len() as f64 * fraction).round() as usize;
        let k = if idx.len() > 1 { k.min(idx.len() - 1) } else { 0 };
        dev.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    dev.sort_unstable();
    (train, dev)
}

/// Stage 2: fine-tunes encoder and classifier head with binary
/// cross-entropy, keeping the epoch with the best dev macro-F1.
pub fn train_stage2<T: Scalar, E: Encoder<T>>(
    encoder: &mut E,
    head: &mut ClassifierHead<T>,
    examples: &[Example<E::Input>],
    config: &TrainingConfig,
) -> Result<Stage2Report> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no training examples".into()));
    }
    let (train_idx, dev_idx) = dev_split(examples, config.dev_fraction, config.seed);
    let train: Vec<&Example<E::Input>> = train_idx.iter().map(|&i| &examples[i]).collect();
    let steps_per_epoch = train.len().div_ceil(config.batch_classify);
    let schedule = LinearSchedule::new(config.lr, config.warmup_ratio, steps_per_epoch * config.epochs_stage2);
    let mut optimizer = AdamW::new(config.optimizer());
    let mut report = Stage2Report {
        dev_ids: dev_idx.iter().map(|&i| examples[i].id.clone()).collect(),
        ..Default::default()
    };
    let mut best: Option<(f64, E::Snapshot, ClassifierHead<T>)> = None;
    let mut step = 0;
    for epoch in 0..config.epochs_stage2 {
        let plan = shuffled_plan(
            train.iter().map(|e| e.id.as_str()),
            config.batch_classify,
            config.seed.wrapping_add(epoch as u64),
        )?;
        for batch in plan_indices(&plan, train.iter().map(|e| e.id.as_str()))? {
            let inputs: Vec<&E::Input> = batch.iter().map(|&i| &train[i].input).collect();
            let labels: Vec<Label> = batch.iter().map(|&i| train[i].label).collect();
            let lr = schedule.lr(step);
            let h = encoder.forward_train(&inputs, step_seed(config.seed, 2, step))?;
            check_finite_output(&h, step, batch.iter().map(|&i| train[i].id.clone()))?;
            let (logits, cache) = head.logits(h.view())?;
            let (loss, grad_logits) = bce_with_logits_grad(&logits, &labels)?;
            let loss = loss.to_f64_lossy();
            check_finite(loss, step, batch.iter().map(|&i| train[i].id.clone()))?;
            let (grads, grad_h) = head.backward(&cache, &grad_logits);
            optimizer.step(lr, head.params(&grads));
            encoder.apply_gradient(&grad_h, lr)?;
            report.log.push(LogRow {
                step,
                epoch,
                loss_sum: loss * batch.len() as f64,
                loss_mean: loss,
                lr,
            });
            step += 1;
        }
        if dev_idx.is_empty() {
            report.best_epoch = epoch;
            continue;
        }
        let inputs: Vec<&E::Input> = dev_idx.iter().map(|&i| &examples[i].input).collect();
        let gold: Vec<Label> = dev_idx.iter().map(|&i| examples[i].label).collect();
        let h = encoder.embed_all(&inputs, config.eval_batch)?;
        let preds: Vec<Label> = head
            .probabilities(h.view())?
            .iter()
            .map(|p| label_for(p.to_f64_lossy(), config.threshold))
            .collect();
        let f1 = compute_metrics::<f64>(&preds, &gold)?.macro_f1;
        log::info!("stage 2 epoch {epoch}: dev macro-F1 {f1:.4}");
        report.dev_macro_f1.push(f1);
        if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
            best = Some((f1, encoder.snapshot()?, head.clone()));
            report.best_epoch = epoch;
        }
    }
    if let Some((_, snap, best_head)) = best {
        encoder.restore(&snap)?;
        *head = best_head;
    }
    Ok(report)
}
