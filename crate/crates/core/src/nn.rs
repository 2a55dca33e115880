//! Small dense layers with hand-written backward passes.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use ndarray_npy::{read_npy, write_npy};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::optim::ParamRef;
use crate::scalar::Scalar;

/// Affine map `y = x Wᵀ + b` over row batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `[out, in]`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    /// Uniform in ±1/√fan_in for weights and bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || {
            T::of(rng.gen_range(-bound..bound))
        });
        let bias = Array1::from_shape_simple_fn(fan_out, || T::of(rng.gen_range(-bound..bound)));
        Linear { weight, bias }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Returns parameter gradients and the gradient w.r.t. `x`.
    pub fn backward(&self, x: ArrayView2<T>, grad_out: ArrayView2<T>) -> (LinearGrad<T>, Array2<T>) {
        let grad = LinearGrad {
            weight: grad_out.t().dot(&x),
            bias: grad_out.sum_axis(Axis(0)),
        };
        (grad, grad_out.dot(&self.weight))
    }

    pub fn params<'a>(&'a mut self, grad: &'a LinearGrad<T>) -> [ParamRef<'a, T>; 2] {
        [
            ParamRef::new(self.weight.view_mut().into_dyn(), grad.weight.view().into_dyn()),
            ParamRef::new(self.bias.view_mut().into_dyn(), grad.bias.view().into_dyn()),
        ]
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        let w = dir.join(format!("{name}.weight.npy"));
        write_npy(&w, &self.weight).map_err(|e| Error::Checkpoint(format!("{}: {e}", w.display())))?;
        let b = dir.join(format!("{name}.bias.npy"));
        write_npy(&b, &self.bias).map_err(|e| Error::Checkpoint(format!("{}: {e}", b.display())))?;
        Ok(())
    }

    pub fn load(dir: &Path, name: &str) -> Result<Self> {
        let w = dir.join(format!("{name}.weight.npy"));
        let weight: Array2<T> =
            read_npy(&w).map_err(|e| Error::Checkpoint(format!("{}: {e}", w.display())))?;
        let b = dir.join(format!("{name}.bias.npy"));
        let bias: Array1<T> =
            read_npy(&b).map_err(|e| Error::Checkpoint(format!("{}: {e}", b.display())))?;
        if bias.len() != weight.nrows() {
            return Err(Error::Checkpoint(format!(
                "{name}: bias length {} does not match weight rows {}",
                bias.len(),
                weight.nrows()
            )));
        }
        Ok(Linear { weight, bias })
    }
}

pub fn relu<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| v.max(T::zero()))
}

/// Gradient through ReLU given its pre-activation input.
pub fn relu_backward<T: Scalar>(pre: &Array2<T>, grad: &Array2<T>) -> Array2<T> {
    let mut out = grad.clone();
    Zip::from(&mut out).and(pre).for_each(|g, &p| {
        if p <= T::zero() {
            *g = T::zero();
        }
    });
    out
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Row-wise L2 normalization; returns the normalized rows and the norms.
pub fn l2_normalize_rows<T: Scalar>(x: &Array2<T>) -> (Array2<T>, Array1<T>) {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let mut out = x.clone();
    for (mut row, &n) in out.rows_mut().into_iter().zip(norms.iter()) {
        row /= n;
    }
    (out, norms)
}

/// Backward through `z = u / ‖u‖` per row.
pub fn l2_normalize_backward<T: Scalar>(z: &Array2<T>, norms: &Array1<T>, grad_z: &Array2<T>) -> Array2<T> {
    let mut out = grad_z.clone();
    for ((mut g, zr), &n) in out.rows_mut().into_iter().zip(z.rows()).zip(norms.iter()) {
        let dot = g.dot(&zr);
        Zip::from(&mut g).and(&zr).for_each(|gi, &zi| *gi = (*gi - zi * dot) / n);
    }
    out
}
