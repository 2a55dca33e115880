//! Embedding dumps, t-SNE projection, silhouette separability and plots.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use ndarray_npy::{read_npy, write_npy};
use plotters::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, SampleSet};
use crate::error::{Error, Result};
use crate::pipeline::{prepare_set, Detector};
use crate::scalar::Scalar;

/// `[CLS]` vectors for a sample set, row-aligned with `ids` and `labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDump<T> {
    pub ids: Vec<String>,
    pub labels: Vec<Label>,
    pub vectors: Array2<T>,
    pub model_version: String,
    pub dataset: String,
}

#[derive(Serialize, Deserialize)]
struct SidecarRow {
    id: String,
    label: Label,
}

#[derive(Serialize, Deserialize)]
struct DumpMeta {
    model_version: String,
    dataset: String,
    count: usize,
    dim: usize,
}

impl<T: Scalar> EmbeddingDump<T> {
    pub fn new(ids: Vec<String>, labels: Vec<Label>, vectors: Array2<T>, model_version: String, dataset: String) -> Result<Self> {
        if ids.len() != labels.len() || ids.len() != vectors.nrows() {
            return Err(Error::Shape(format!(
                "{} ids, {} labels, {} vectors",
                ids.len(),
                labels.len(),
                vectors.nrows()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite embedding".into()));
        }
        Ok(EmbeddingDump { ids, labels, vectors, model_version, dataset })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Writes `embeddings.npy`, `embeddings.jsonl` and `embeddings.meta.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let npy = dir.join("embeddings.npy");
        write_npy(&npy, &self.vectors).map_err(|e| Error::Checkpoint(format!("{}: {e}", npy.display())))?;
        let side = dir.join("embeddings.jsonl");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&side).map_err(|e| Error::io(&side, e))?);
        for (id, label) in self.ids.iter().zip(&self.labels) {
            serde_json::to_writer(&mut f, &SidecarRow { id: id.clone(), label: *label })?;
            f.write_all(b"\n").map_err(|e| Error::io(&side, e))?;
        }
        f.flush().map_err(|e| Error::io(&side, e))?;
        let meta = DumpMeta {
            model_version: self.model_version.clone(),
            dataset: self.dataset.clone(),
            count: self.len(),
            dim: self.vectors.ncols(),
        };
        let mp = dir.join("embeddings.meta.json");
        std::fs::write(&mp, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&mp, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let npy = dir.join("embeddings.npy");
        let vectors: Array2<T> =
            read_npy(&npy).map_err(|e| Error::Checkpoint(format!("{}: {e}", npy.display())))?;
        let side = dir.join("embeddings.jsonl");
        let f = std::fs::File::open(&side).map_err(|e| Error::io(&side, e))?;
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(&side, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: SidecarRow = serde_json::from_str(&line)?;
            ids.push(row.id);
            labels.push(row.label);
        }
        let mp = dir.join("embeddings.meta.json");
        let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let meta: DumpMeta = serde_json::from_str(&text)?;
        Self::new(ids, labels, vectors, meta.model_version, meta.dataset)
    }
}

/// `[CLS]` vectors for every sample of `set`, in set order.
pub fn export_embeddings(detector: &Detector, set: &SampleSet) -> Result<EmbeddingDump<f32>> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("cannot export embeddings of an empty set".into()));
    }
    let prepared = prepare_set(detector.tokenizer(), &detector.spec, set)?;
    if prepared.examples.is_empty() {
        return Err(Error::NoCodeContent);
    }
    let inputs: Vec<_> = prepared.examples.iter().map(|e| &e.input).collect();
    let vectors = detector.embed(&inputs)?;
    EmbeddingDump::new(
        prepared.examples.iter().map(|e| e.id.clone()).collect(),
        prepared.examples.iter().map(|e| e.label).collect(),
        vectors,
        detector.version().to_string(),
        set.provenance.dataset.as_str().to_string(),
    )
}

fn sq_distances<T: Scalar>(x: ArrayView2<T>) -> Array2<T> {
    let sq = x.map_axis(Axis(1), |r| r.dot(&r));
    let gram = x.dot(&x.t());
    let n = x.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            T::zero()
        } else {
            (sq[i] + sq[j] - gram[[i, j]] - gram[[i, j]]).max(T::zero())
        }
    })
}

/// Mean silhouette coefficient with Euclidean distance.
///
/// Points whose class has no other member score 0, so a dump with one point
/// per class scores 0 (logged as a warning).
pub fn separability_score<T: Scalar>(x: ArrayView2<T>, labels: &[Label]) -> Result<T> {
    if x.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} points but {} labels", x.nrows(), labels.len())));
    }
    if !(labels.contains(&Label::Human) && labels.contains(&Label::Ai)) {
        return Err(Error::InvalidArgument("silhouette needs both labels present".into()));
    }
    let d = sq_distances(x).mapv(T::sqrt);
    let n = labels.len();
    let counts = Label::ALL.map(|l| labels.iter().filter(|&&m| m == l).count());
    if counts.iter().all(|&c| c == 1) {
        log::warn!("one point per class; silhouette defined as 0");
        return Ok(T::zero());
    }
    let mut total = T::zero();
    for i in 0..n {
        let own = labels[i].index();
        if counts[own] == 1 {
            continue;
        }
        let mut sums = [T::zero(); 2];
        for j in 0..n {
            if j != i {
                sums[labels[j].index()] += d[[i, j]];
            }
        }
        let a = sums[own] / T::of((counts[own] - 1) as f64);
        let b = sums[1 - own] / T::of(counts[1 - own] as f64);
        let m = a.max(b);
        if m > T::zero() {
            total += (b - a) / m;
        }
    }
    Ok(total / T::of(n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        TsneParams {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            seed: 0,
        }
    }
}

/// Conditional affinities `P(j|i)` with per-row bandwidth matched to the
/// perplexity by bisection.
fn affinities<T: Scalar>(d2: &Array2<T>, perplexity: f64) -> Array2<T> {
    let n = d2.nrows();
    let target = perplexity.ln();
    let mut p = Array2::<T>::zeros((n, n));
    for i in 0..n {
        let (mut lo, mut hi, mut beta) = (f64::NEG_INFINITY, f64::INFINITY, 1.0f64);
        let row: Vec<f64> = d2.row(i).iter().map(|v| v.to_f64_lossy()).collect();
        let min = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        let mut probs = vec![0.0; n];
        for _ in 0..100 {
            let mut sum = 0.0;
            for j in 0..n {
                probs[j] = if j == i { 0.0 } else { (-(row[j] - min) * beta).exp() };
                sum += probs[j];
            }
            let mut entropy = 0.0;
            for (j, q) in probs.iter_mut().enumerate() {
                *q /= sum;
                if j != i && *q > 0.0 {
                    entropy -= *q * q.ln();
                }
            }
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
            }
        }
        for j in 0..n {
            p[[i, j]] = T::of(probs[j]);
        }
    }
    p
}

/// Exact t-SNE to two dimensions.
pub fn tsne<T: Scalar>(x: ArrayView2<T>, params: &TsneParams) -> Result<Array2<T>> {
    let n = x.nrows();
    if !(params.perplexity > 0.0) || 3.0 * params.perplexity >= n as f64 {
        return Err(Error::InvalidArgument(format!(
            "perplexity {} needs more than {} points, got {n}",
            params.perplexity,
            (3.0 * params.perplexity).floor()
        )));
    }
    let cond = affinities(&sq_distances(x), params.perplexity);
    let denom = T::of(2.0 * n as f64);
    let floor = T::of(1e-12);
    let p = ((&cond + &cond.t()) / denom).mapv(|v| v.max(floor));

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y = Array2::from_shape_simple_fn((n, 2), || T::of(normal.sample(&mut rng)));
    let mut update = Array2::<T>::zeros((n, 2));
    let mut gains = Array2::<T>::ones((n, 2));
    let lr = T::of(params.learning_rate);
    let min_gain = T::of(0.01);
    let exaggeration_iters = 250.min(params.iterations / 4);
    for it in 0..params.iterations {
        let exaggeration = T::of(if it < exaggeration_iters { 12.0 } else { 1.0 });
        let momentum = T::of(if it < exaggeration_iters { 0.5 } else { 0.8 });
        let num = sq_distances(y.view()).mapv(|d| T::one() / (T::one() + d));
        let mut num = num;
        for i in 0..n {
            num[[i, i]] = T::zero();
        }
        let z: T = num.sum();
        let mut grad = Array2::<T>::zeros((n, 2));
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[[i, j]] / z).max(floor);
                let w = T::of(4.0) * (exaggeration * p[[i, j]] - q) * num[[i, j]];
                for k in 0..2 {
                    grad[[i, k]] += w * (y[[i, k]] - y[[j, k]]);
                }
            }
        }
        for ((g, u), gain) in grad.iter().zip(update.iter()).zip(gains.iter_mut()) {
            let same_sign = (*g > T::zero()) == (*u > T::zero());
            *gain = if same_sign { (*gain * T::of(0.8)).max(min_gain) } else { *gain + T::of(0.2) };
        }
        update = &update * momentum - &(&grad * &gains) * lr;
        y += &update;
        let mean = y.mean_axis(Axis(0)).expect("non-empty");
        y -= &mean;
    }
    Ok(y)
}

/// Scatter plot of 2-D points colored by label (human blue, AI orange).
pub fn plot_points<T: Scalar>(points: ArrayView2<T>, labels: &[Label], title: &str, path: &Path) -> Result<()> {
    if points.ncols() != 2 || points.nrows() != labels.len() {
        return Err(Error::Shape("plot needs N x 2 points and N labels".into()));
    }
    let pts: Vec<(f64, f64)> = points
        .rows()
        .into_iter()
        .map(|r| (r[0].to_f64_lossy(), r[1].to_f64_lossy()))
        .collect();
    let span = |f: fn(&(f64, f64)) -> f64| {
        let lo = pts.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        let pad = ((hi - lo) * 0.05).max(1e-6);
        (lo - pad)..(hi + pad)
    };
    let plot_err = |e: &dyn std::fmt::Display| Error::Plot(e.to_string());
    let root = SVGBackend::new(path, (800, 640)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(30)
        .y_label_area_size(40)
        .build_cartesian_2d(span(|p| p.0), span(|p| p.1))
        .map_err(|e| plot_err(&e))?;
    chart.configure_mesh().draw().map_err(|e| plot_err(&e))?;
    let colors = [RGBColor(31, 119, 180), RGBColor(255, 127, 14)];
    for label in Label::ALL {
        let color = colors[label.index()];
        chart
            .draw_series(
                pts.iter()
                    .zip(labels)
                    .filter(|(_, &l)| l == label)
                    .map(|(&p, _)| Circle::new(p, 3, color.filled())),
            )
            .map_err(|e| plot_err(&e))?
            .label(label.name())
            .legend(move |(x, y)| Circle::new((x, y), 4, color.filled()));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE)
        .draw()
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}
