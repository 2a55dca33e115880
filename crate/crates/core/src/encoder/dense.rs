use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use super::Encoder;
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::optim::{AdamW, AdamWConfig};
use crate::scalar::Scalar;

/// `h = tanh(W x + b)` over precomputed feature vectors.
#[derive(Debug, Clone)]
pub struct DenseEncoder<T> {
    pub layer: Linear<T>,
    optimizer: AdamW<T>,
    cache: Option<(Array2<T>, Array2<T>)>,
}

impl<T: Scalar> DenseEncoder<T> {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng, optim: AdamWConfig) -> Self {
        DenseEncoder {
            layer: Linear::init(input, hidden, rng),
            optimizer: AdamW::new(optim),
            cache: None,
        }
    }

    fn stack(&self, inputs: &[&Array1<T>]) -> Result<Array2<T>> {
        let d = self.layer.fan_in();
        let mut x = Array2::zeros((inputs.len(), d));
        for (mut row, v) in x.rows_mut().into_iter().zip(inputs) {
            if v.len() != d {
                return Err(Error::Shape(format!("expected {d} features, got {}", v.len())));
            }
            row.assign(v);
        }
        Ok(x)
    }
}

impl<T: Scalar> Encoder<T> for DenseEncoder<T> {
    type Input = Array1<T>;
    type Snapshot = (Linear<T>, AdamW<T>);

    fn hidden_size(&self) -> usize {
        self.layer.fan_out()
    }

    fn embed(&self, inputs: &[&Array1<T>]) -> Result<Array2<T>> {
        let x = self.stack(inputs)?;
        Ok(self.layer.forward(x.view()).mapv(T::tanh))
    }

    fn forward_train(&mut self, inputs: &[&Array1<T>], _seed: u64) -> Result<Array2<T>> {
        let x = self.stack(inputs)?;
        let h = self.layer.forward(x.view()).mapv(T::tanh);
        self.cache = Some((x, h.clone()));
        Ok(h)
    }

    fn apply_gradient(&mut self, grad: &Array2<T>, lr: f64) -> Result<()> {
        let (x, h) = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidArgument("apply_gradient without forward_train".into()))?;
        let g_pre = grad * &h.mapv(|v| T::one() - v * v);
        let (g, _) = self.layer.backward(x.view(), g_pre.view());
        self.optimizer.step(lr, self.layer.params(&g));
        Ok(())
    }

    fn snapshot(&self) -> Result<Self::Snapshot> {
        Ok((self.layer.clone(), self.optimizer.clone()))
    }

    fn restore(&mut self, snapshot: &Self::Snapshot) -> Result<()> {
        self.layer = snapshot.0.clone();
        self.optimizer = snapshot.1.clone();
        self.cache = None;
        Ok(())
    }
}
