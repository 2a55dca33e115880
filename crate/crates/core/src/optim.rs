//! Decoupled weight decay Adam and the warmup/decay learning-rate schedule.

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, Zip};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

pub struct ParamRef<'a, T> {
    pub value: ArrayViewMutD<'a, T>,
    pub grad: ArrayViewD<'a, T>,
}

impl<'a, T> ParamRef<'a, T> {
    pub fn new(value: ArrayViewMutD<'a, T>, grad: ArrayViewD<'a, T>) -> Self {
        ParamRef { value, grad }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment buffers are created lazily on the first step and matched to
/// parameters by position, so callers must pass parameters in a fixed order.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: i32,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step as usize
    }

    pub fn step<'a>(&mut self, lr: f64, params: impl IntoIterator<Item = ParamRef<'a, T>>) {
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.step));
        let bc2 = T::of(1.0 - c.beta2.powi(self.step));
        let decay = T::of(1.0 - lr * c.weight_decay);
        let (lr, eps) = (T::of(lr), T::of(c.eps));
        for (i, mut p) in params.into_iter().enumerate() {
            if self.m.len() == i {
                self.m.push(ArrayD::zeros(p.value.raw_dim()));
                self.v.push(ArrayD::zeros(p.value.raw_dim()));
            }
            assert_eq!(self.m[i].shape(), p.value.shape(), "parameter order changed");
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w = *w * decay - lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}

/// Linear warmup to `peak` over the first `warmup` steps, then linear decay
/// to zero at `total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub peak: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LinearSchedule {
    pub fn new(peak: f64, warmup_ratio: f64, total: usize) -> Self {
        LinearSchedule {
            peak,
            warmup: (warmup_ratio * total as f64).ceil() as usize,
            total,
        }
    }

    /// Learning rate for the zero-based `step`.
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup {
            self.peak * (step + 1) as f64 / self.warmup as f64
        } else if self.total <= self.warmup {
            self.peak
        } else {
            self.peak * (self.total - step.min(self.total)) as f64 / (self.total - self.warmup) as f64
        }
    }
}
