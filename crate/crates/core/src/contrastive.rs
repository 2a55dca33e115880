//! Stage 1: projection head and the supervised contrastive objective.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainingConfig;
use crate::corpus::balanced_plan;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::nn::{l2_normalize_backward, l2_normalize_rows, relu, relu_backward, Linear, LinearGrad};
use crate::optim::{AdamW, LinearSchedule, ParamRef};
use crate::scalar::Scalar;
use crate::train::{check_finite, check_finite_output, plan_indices, step_seed, Example, LogRow, TrainingLog};

pub const DEFAULT_TAU: f64 = 0.07;
const DEGENERATE_NORM: f64 = 1e-12;

/// `h → ReLU(W1 h + b1) → W2 · + b2 → ℓ2-normalize`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead<T> {
    pub layer1: Linear<T>,
    pub layer2: Linear<T>,
}

pub struct ProjectionCache<T> {
    input: Array2<T>,
    pre1: Array2<T>,
    act1: Array2<T>,
    out: Array2<T>,
    norms: Array1<T>,
}

#[derive(Debug, Clone)]
pub struct ProjectionGrad<T> {
    pub layer1: LinearGrad<T>,
    pub layer2: LinearGrad<T>,
}

impl<T: Scalar> ProjectionHead<T> {
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        ProjectionHead {
            layer1: Linear::init(input, hidden, rng),
            layer2: Linear::init(hidden, output, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layer2.fan_out()
    }

    /// Projects a batch of representations to unit vectors.
    pub fn project(&self, h: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(self.forward(h)?.0)
    }

    pub fn forward(&self, h: ArrayView2<T>) -> Result<(Array2<T>, ProjectionCache<T>)> {
        if h.ncols() != self.layer1.fan_in() {
            return Err(Error::Shape(format!(
                "projection head expects {} inputs, got {}",
                self.layer1.fan_in(),
                h.ncols()
            )));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite representation".into()));
        }
        let pre1 = self.layer1.forward(h);
        let act1 = relu(&pre1);
        let out = self.layer2.forward(act1.view());
        let (z, norms) = l2_normalize_rows(&out);
        if let Some(n) = norms.iter().find(|n| n.to_f64_lossy() < DEGENERATE_NORM) {
            return Err(Error::DegenerateProjection(n.to_f64_lossy()));
        }
        let cache = ProjectionCache {
            input: h.to_owned(),
            pre1,
            act1,
            out: z.clone(),
            norms,
        };
        Ok((z, cache))
    }

    /// Gradients for the head's parameters and for its input.
    pub fn backward(&self, cache: &ProjectionCache<T>, grad_z: &Array2<T>) -> (ProjectionGrad<T>, Array2<T>) {
        let g_out = l2_normalize_backward(&cache.out, &cache.norms, grad_z);
        let (g2, g_act) = self.layer2.backward(cache.act1.view(), g_out.view());
        let g_pre = relu_backward(&cache.pre1, &g_act);
        let (g1, g_h) = self.layer1.backward(cache.input.view(), g_pre.view());
        (ProjectionGrad { layer1: g1, layer2: g2 }, g_h)
    }

    pub fn params<'a>(&'a mut self, grad: &'a ProjectionGrad<T>) -> Vec<ParamRef<'a, T>> {
        let mut v = Vec::with_capacity(4);
        v.extend(self.layer1.params(&grad.layer1));
        v.extend(self.layer2.params(&grad.layer2));
        v
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.layer1.save(dir, "projection.layer1")?;
        self.layer2.save(dir, "projection.layer2")
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(ProjectionHead {
            layer1: Linear::load(dir, "projection.layer1")?,
            layer2: Linear::load(dir, "projection.layer2")?,
        })
    }
}

/// Unit-norm projections with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch<T> {
    pub z: Array2<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> ContrastiveBatch<T> {
    pub fn new(z: Array2<T>, labels: Vec<usize>) -> Result<Self> {
        if z.nrows() != labels.len() {
            return Err(Error::Shape(format!("{} rows but {} labels", z.nrows(), labels.len())));
        }
        if z.nrows() % 2 != 0 {
            return Err(Error::InvalidArgument(format!("batch size {} is odd", z.nrows())));
        }
        if !(labels.contains(&0) && labels.contains(&1)) {
            return Err(Error::InvalidArgument("batch must contain both labels".into()));
        }
        for (i, row) in z.rows().into_iter().enumerate() {
            let n = row.dot(&row).sqrt().to_f64_lossy();
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!("row {i} has norm {n}")));
            }
        }
        Ok(ContrastiveBatch { z, labels })
    }

    pub fn loss(&self, tau: f64) -> Result<T> {
        supcon_loss(self.z.view(), &self.labels, tau)
    }
}

/// Supervised contrastive loss summed over anchors.
///
/// Anchors without a same-label peer are left out of the sum.
pub fn supcon_loss<T: Scalar>(z: ArrayView2<T>, labels: &[usize], tau: f64) -> Result<T> {
    Ok(supcon(z, labels, tau, false)?.0)
}

/// Loss together with its gradient with respect to `z`.
pub fn supcon_loss_with_grad<T: Scalar>(
    z: ArrayView2<T>,
    labels: &[usize],
    tau: f64,
) -> Result<(T, Array2<T>)> {
    let (loss, grad) = supcon(z, labels, tau, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

fn supcon<T: Scalar>(
    z: ArrayView2<T>,
    labels: &[usize],
    tau: f64,
    want_grad: bool,
) -> Result<(T, Option<Array2<T>>)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let n = z.nrows();
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} rows but {} labels", labels.len())));
    }
    let logits = z.dot(&z.t()) / T::of(tau);
    let mut g = Array2::<T>::zeros((n, n));
    let mut total = T::zero();
    let mut anchors = 0;
    for i in 0..n {
        let positives = (0..n).filter(|&p| p != i && labels[p] == labels[i]).count();
        if positives == 0 {
            continue;
        }
        anchors += 1;
        let row = logits.row(i);
        let max = (0..n)
            .filter(|&a| a != i)
            .map(|a| row[a])
            .fold(T::neg_infinity(), T::max);
        let denom: T = (0..n).filter(|&a| a != i).map(|a| (row[a] - max).exp()).sum();
        let log_denom = max + denom.ln();
        let inv_p = T::one() / T::of(positives as f64);
        let mut term = T::zero();
        for p in (0..n).filter(|&p| p != i && labels[p] == labels[i]) {
            term += row[p] - log_denom;
        }
        total -= term * inv_p;
        if want_grad {
            let scale = T::of(1.0 / tau);
            for j in (0..n).filter(|&j| j != i) {
                let soft = (row[j] - log_denom).exp();
                let pos = if labels[j] == labels[i] { inv_p } else { T::zero() };
                g[[i, j]] = (soft - pos) * scale;
            }
        }
    }
    if anchors == 0 {
        return Err(Error::NoPositivePairs);
    }
    let grad = want_grad.then(|| {
        let sym = &g + &g.t();
        sym.dot(&z)
    });
    Ok((total, grad))
}

/// Stage 1: trains encoder and projection head with the contrastive loss
/// on class-balanced batches. Returns the per-step log.
pub fn train_stage1<T: Scalar, E: Encoder<T>>(
    encoder: &mut E,
    head: &mut ProjectionHead<T>,
    examples: &[Example<E::Input>],
    config: &TrainingConfig,
) -> Result<TrainingLog> {
    let items = || examples.iter().map(|e| (e.id.as_str(), e.label));
    let first = balanced_plan(items(), config.batch_contrastive, config.seed)?;
    if first.is_empty() {
        return Err(Error::InvalidBatchPlan(format!(
            "too few samples per class for batch size {}",
            config.batch_contrastive
        )));
    }
    let schedule = LinearSchedule::new(config.lr, config.warmup_ratio, first.len() * config.epochs_stage1);
    let mut optimizer = AdamW::new(config.optimizer());
    let mut log = TrainingLog::default();
    let mut step = 0;
    for epoch in 0..config.epochs_stage1 {
        let plan = if epoch == 0 {
            first.clone()
        } else {
            balanced_plan(items(), config.batch_contrastive, config.seed.wrapping_add(epoch as u64))?
        };
        for batch in plan_indices(&plan, examples.iter().map(|e| e.id.as_str()))? {
            let inputs: Vec<&E::Input> = batch.iter().map(|&i| &examples[i].input).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| examples[i].label.index()).collect();
            let lr = schedule.lr(step);
            let h = encoder.forward_train(&inputs, step_seed(config.seed, 1, step))?;
            check_finite_output(&h, step, batch.iter().map(|&i| examples[i].id.clone()))?;
            let (z, cache) = head.forward(h.view())?;
            let (loss, grad_z) = supcon_loss_with_grad(z.view(), &labels, config.tau)?;
            let loss = loss.to_f64_lossy();
            check_finite(loss, step, batch.iter().map(|&i| examples[i].id.clone()))?;
            let (grads, grad_h) = head.backward(&cache, &grad_z);
            optimizer.step(lr, head.params(&grads));
            encoder.apply_gradient(&grad_h, lr)?;
            log.push(LogRow {
                step,
                epoch,
                loss_sum: loss,
                loss_mean: loss / batch.len() as f64,
                lr,
            });
            step += 1;
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    /// Direct enumeration of P(i) and A(i).
    fn oracle(z: &Array2<f64>, labels: &[usize], tau: f64) -> Option<f64> {
        let n = z.nrows();
        let dot = |a: usize, b: usize| z.row(a).dot(&z.row(b)) / tau;
        let mut total = 0.0;
        let mut any = false;
        for i in 0..n {
            let p: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
            if p.is_empty() {
                continue;
            }
            any = true;
            let denom: f64 = (0..n).filter(|&a| a != i).map(|a| dot(i, a).exp()).sum();
            let s: f64 = p.iter().map(|&q| (dot(i, q).exp() / denom).ln()).sum();
            total += -s / p.len() as f64;
        }
        any.then_some(total)
    }

    fn random_unit(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        let raw = Array2::from_shape_simple_fn((n, d), || rng.gen_range(-1.0..1.0));
        l2_normalize_rows(&raw).0
    }

    #[test]
    fn hand_case() {
        let z = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        let loss = supcon_loss(z.view(), &[0, 0, 1, 1], 1.0).unwrap();
        let expected = 4.0 * (1.0 + 2.0 / std::f64::consts::E).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 2.2058).abs() < 1e-4);
    }

    #[test]
    fn identical_pair_is_zero() {
        let z: Array2<f64> = array![[0.6, 0.8], [0.6, 0.8]];
        assert!(supcon_loss(z.view(), &[1, 1], 0.07).unwrap().abs() < 1e-12);
    }

    #[test]
    fn matches_oracle_and_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = 2 * rng.gen_range(1..=8);
            let d = rng.gen_range(1..=8);
            let z = random_unit(&mut rng, n, d);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            let tau = rng.gen_range(0.05..2.0);
            let got = supcon_loss(z.view(), &labels, tau);
            match oracle(&z, &labels, tau) {
                Some(want) => {
                    let got = got.unwrap();
                    assert!((got - want).abs() < 1e-6 * want.abs().max(1.0), "{got} vs {want}");
                    assert!(got >= 0.0);
                    let mut perm: Vec<usize> = (0..n).collect();
                    perm.reverse();
                    let zp = z.select(ndarray::Axis(0), &perm);
                    let lp: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
                    let again = supcon_loss(zp.view(), &lp, tau).unwrap();
                    assert!((again - got).abs() < 1e-9);
                }
                None => assert!(matches!(got, Err(Error::NoPositivePairs))),
            }
        }
    }

    #[test]
    fn skips_anchors_without_positives() {
        let z = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let with_singleton = supcon_loss(z.view(), &[0, 0, 1], 1.0).unwrap();
        assert!((with_singleton - oracle(&z, &[0, 0, 1], 1.0).unwrap()).abs() < 1e-12);
        assert!(matches!(
            supcon_loss(z.view(), &[0, 1, 2], 1.0),
            Err(Error::NoPositivePairs)
        ));
    }

    #[test]
    fn rejects_bad_tau() {
        let z = array![[1.0, 0.0], [1.0, 0.0]];
        assert!(supcon_loss(z.view(), &[0, 0], 0.0).is_err());
        assert!(supcon_loss(z.view(), &[0, 0], -1.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let n = 2 * rng.gen_range(2..=5);
            let d = rng.gen_range(2..=6);
            let z = random_unit(&mut rng, n, d);
            let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let tau = 0.5;
            let (_, g) = supcon_loss_with_grad(z.view(), &labels, tau).unwrap();
            let h = 1e-5;
            for idx in [(0, 0), (n - 1, d - 1), (n / 2, 1)] {
                let mut zp = z.clone();
                zp[idx] += h;
                let mut zm = z.clone();
                zm[idx] -= h;
                let fd = (supcon_loss(zp.view(), &labels, tau).unwrap()
                    - supcon_loss(zm.view(), &labels, tau).unwrap())
                    / (2.0 * h);
                let rel = (fd - g[idx]).abs() / fd.abs().max(g[idx].abs()).max(1e-8);
                assert!(rel < 1e-4, "{idx:?}: {fd} vs {}", g[idx]);
            }
        }
    }

    #[test]
    fn projection_is_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = ProjectionHead::<f64>::init(12, 8, 4, &mut rng);
        let h = Array2::from_shape_simple_fn((3, 12), || rng.gen_range(-2.0..2.0));
        let z = head.project(h.view()).unwrap();
        for r in z.rows() {
            assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-6);
        }
        let z2 = head.project((&h * 2.0).view()).unwrap();
        assert_ne!(z, z2);
    }

    #[test]
    fn degenerate_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut head = ProjectionHead::<f64>::init(4, 3, 2, &mut rng);
        head.layer2.bias.fill(0.0);
        head.layer1.bias.fill(0.0);
        let err = head.project(Array2::zeros((1, 4)).view()).unwrap_err();
        assert!(matches!(err, Error::DegenerateProjection(_)));
        assert!(err.to_string().contains("degenerate projection"));
    }

    #[test]
    fn batch_invariants() {
        let z = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(ContrastiveBatch::new(z.clone(), vec![0, 1]).is_ok());
        assert!(ContrastiveBatch::new(z.clone(), vec![0, 0]).is_err());
        assert!(ContrastiveBatch::new(z * 2.0, vec![0, 1]).is_err());
    }
}
