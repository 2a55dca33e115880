//! Acceptance run: one PASS / FAIL / SKIPPED / NOT RUN line per criterion.
//!
//! `cargo test -p codeorigin-core --test acceptance`

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use codeorigin_core::classify::{bce_with_logits_grad, label_for, train_stage2, ClassifierHead, HeadKind};
use codeorigin_core::contrastive::{supcon_loss, supcon_loss_with_grad, train_stage1, ProjectionHead};
use codeorigin_core::corpus::synthetic::fixture_corpus;
use codeorigin_core::corpus::{
    default_data_root, load_jsonl, reference_counts, verify_stats, DatasetKind, Label, SampleSet, Split,
};
use codeorigin_core::encoder::{DenseEncoder, Encoder};
use codeorigin_core::eval::{compute_metrics, paper_target, tolerance_pp};
use codeorigin_core::pipeline::{reproduce, ReproduceBundle, ReproduceOptions};
use codeorigin_core::train::Example;
use codeorigin_core::visualize::separability_score;
use codeorigin_core::TrainingConfig;
use ndarray::{array, Array1, Array2};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use common::*;

enum Outcome {
    Pass(String),
    Fail(String),
    Skipped(String),
    NotRun(String),
}

struct Report {
    failures: usize,
}

impl Report {
    fn check(&mut self, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let started = Instant::now();
        let mut outcome = f();
        let took = started.elapsed();
        if let (Some(limit), Outcome::Pass(detail)) = (limit, &outcome) {
            if took > limit {
                outcome = Outcome::Fail(format!("{detail}; took {took:.1?}, limit {limit:?}"));
            }
        }
        let (tag, detail) = match &outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => ("FAIL", d),
            Outcome::Skipped(d) => ("SKIPPED", d),
            Outcome::NotRun(d) => ("NOT RUN", d),
        };
        if matches!(outcome, Outcome::Fail(_)) {
            self.failures += 1;
        }
        println!("{tag:<8} {name} ({took:.2?}): {detail}");
    }
}

fn verdict(violations: Vec<String>, ok: String) -> Outcome {
    match violations.first() {
        None => Outcome::Pass(ok),
        Some(first) => Outcome::Fail(format!("{} violations; first: {first}", violations.len())),
    }
}

fn supcon_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut bad = Vec::new();
    let mut worst = 0.0f64;
    for b in 0..200 {
        let n = rng.gen_range(2..=16);
        let dim = rng.gen_range(1..=8);
        let tau = rng.gen_range(0.05..1.0);
        let z = random_unit_rows(n, dim, &mut rng);
        let labels = random_labels(n, &mut rng);
        let fast = supcon_loss(z.view(), &labels, tau).unwrap();
        let slow = supcon_brute(&z, &labels, tau).unwrap();
        let err = (fast - slow).abs() / slow.abs().max(1.0);
        worst = worst.max(err);
        if err > 1e-6 {
            bad.push(format!("batch {b}: {fast} vs {slow}"));
        }
    }
    let z = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
    let hand = supcon_loss(z.view(), &[0, 0, 1, 1], 1.0).unwrap();
    let closed = 4.0 * (1.0 + 2.0 / std::f64::consts::E).ln();
    if (hand - closed).abs() > 1e-4 {
        bad.push(format!("hand case {hand} vs {closed}"));
    }
    verdict(bad, format!("200 batches, worst relative gap {worst:.1e}; hand case {hand:.5}"))
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut bad = Vec::new();
    let mut worst = 0.0f64;
    let mut note = |what: &str, i: usize, err: f64, bad: &mut Vec<String>| {
        worst = worst.max(err);
        if err > 1e-4 {
            bad.push(format!("instance {i} {what}: relative error {err:.2e}"));
        }
    };
    for i in 0..50 {
        let n = rng.gen_range(4..=10);
        let dim = rng.gen_range(2..=6);
        let tau = rng.gen_range(0.1..1.0);
        let labels = random_labels(n, &mut rng);

        let z = random_unit_rows(n, dim, &mut rng);
        let (_, g) = supcon_loss_with_grad(z.view(), &labels, tau).unwrap();
        let num = numeric_grad(&z, 1e-6, |z| supcon_loss(z.view(), &labels, tau).unwrap());
        note("supcon dz", i, rel_error(&g, &num), &mut bad);

        let hdim = rng.gen_range(3..=8);
        let h = Array2::from_shape_fn((n, hdim), |_| rng.gen_range(-1.0..1.0));
        let proj = ProjectionHead::<f64>::init(hdim, 6, 4, &mut rng);
        let (zp, cache) = proj.forward(h.view()).unwrap();
        let (_, gz) = supcon_loss_with_grad(zp.view(), &labels, tau).unwrap();
        let (_, gh) = proj.backward(&cache, &gz);
        let num = numeric_grad(&h, 1e-6, |h| {
            supcon_loss(proj.project(h.view()).unwrap().view(), &labels, tau).unwrap()
        });
        note("projection dh", i, rel_error(&gh, &num), &mut bad);

        let kind = if i % 2 == 0 { HeadKind::Mlp } else { HeadKind::Linear };
        let head = ClassifierHead::<f64>::init(kind, hdim, 5, &mut rng);
        let y: Vec<Label> = labels.iter().map(|&l| Label::from_index(l as u64).unwrap()).collect();
        let loss_at = |head: &ClassifierHead<f64>, h: &Array2<f64>| {
            bce_with_logits_grad(&head.logits(h.view()).unwrap().0, &y).unwrap().0
        };
        let (logits, cache) = head.logits(h.view()).unwrap();
        let (_, gl) = bce_with_logits_grad(&logits, &y).unwrap();
        let (grads, gh) = head.backward(&cache, &gl);
        let num = numeric_grad(&h, 1e-6, |h| loss_at(&head, h));
        note("classifier dh", i, rel_error(&gh, &num), &mut bad);
        for (k, g) in grads.iter().enumerate() {
            let w = head.layers[k].weight.clone();
            let num = numeric_grad(&w, 1e-6, |w| {
                let mut probe = head.clone();
                probe.layers[k].weight = w.clone();
                loss_at(&probe, &h)
            });
            note("classifier dW", i, rel_error(&g.weight, &num), &mut bad);
            let bias = head.layers[k].bias.clone();
            let num: Array1<f64> = numeric_grad_1d(&bias, 1e-6, |b| {
                let mut probe = head.clone();
                probe.layers[k].bias = b.clone();
                loss_at(&probe, &h)
            });
            note("classifier db", i, rel_error(&g.bias, &num), &mut bad);
        }
    }
    verdict(bad, format!("50 instances, worst relative error {worst:.1e}"))
}

fn preprocessor() -> Outcome {
    let corpus = code_corpus(500, 13);
    let mut bad = Vec::new();
    for (i, (src, lang)) in corpus.iter().enumerate() {
        for v in preprocessor_violations(src, *lang) {
            bad.push(format!("file {i}: {v}"));
        }
    }
    verdict(bad, "500 files (Java, Python, C++), zero violations".into())
}

fn batching() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut bad = Vec::new();
    for _ in 0..1000 {
        let n0 = rng.gen_range(1..=300);
        let n1 = rng.gen_range(1..=300);
        let b = 2 * rng.gen_range(2..=32);
        if let Err(e) = check_balanced(n0, n1, b, rng.gen()) {
            bad.push(e);
        }
    }
    verdict(bad, "1000 configurations".into())
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut bad = Vec::new();
    for k in 0..1000 {
        let n = rng.gen_range(1..=200);
        let preds = random_labels_vec(n, &mut rng);
        let gold = random_labels_vec(n, &mut rng);
        let m = compute_metrics::<Ratio<i64>>(&preds, &gold).unwrap();
        let o = metrics_brute(&preds, &gold);
        let same = m.accuracy == o.accuracy
            && m.macro_f1 == o.macro_f1
            && m.macro_precision == o.macro_precision
            && m.macro_recall == o.macro_recall
            && (0..2).all(|c| {
                m.per_class[c].precision == o.precision[c]
                    && m.per_class[c].recall == o.recall[c]
                    && m.per_class[c].f1 == o.f1[c]
            });
        if !same {
            bad.push(format!("vector {k} (n={n})"));
        }
    }
    let counts = reference_counts(DatasetKind::GptSniffer, Split::Test).unwrap();
    let gold: Vec<Label> = std::iter::repeat(Label::Human)
        .take(counts.human)
        .chain(std::iter::repeat(Label::Ai).take(counts.ai))
        .collect();
    let preds = vec![Label::Ai; gold.len()];
    let acc = compute_metrics::<Ratio<i64>>(&preds, &gold).unwrap().accuracy;
    if acc != Ratio::new(142, 273) {
        bad.push(format!("constant classifier accuracy {acc}"));
    }
    verdict(bad, format!("1000 vectors exact; constant classifier {acc}"))
}

fn integrity_violations(set: &SampleSet, kind: DatasetKind) -> Vec<String> {
    let (stats, warnings) = verify_stats(set);
    let mut bad: Vec<String> = warnings
        .iter()
        .map(|w| format!("{kind} {:?}: expected {}, found {}", w.split, w.expected, w.observed))
        .collect();
    for split in [Split::Train, Split::Test] {
        if Some(stats.split(split)) != reference_counts(kind, split) {
            bad.push(format!("{kind} {split:?}: {}", stats.split(split)));
        }
    }
    bad
}

fn integrity_fixture() -> Outcome {
    let mut bad = Vec::new();
    for kind in [DatasetKind::GptSniffer, DatasetKind::Whodunit] {
        let set = fixture_corpus(kind, 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(format!("{kind}.jsonl"));
        set.write_jsonl(&path).unwrap();
        let reloaded = load_jsonl(&path, kind).unwrap();
        bad.extend(integrity_violations(&reloaded, kind));
    }
    verdict(bad, "fixture corpora: 600/600 + 131/142 and 639/639 + 159/159".into())
}

fn integrity_real() -> Outcome {
    let root = default_data_root();
    let mut found = 0;
    let mut bad = Vec::new();
    for kind in [DatasetKind::GptSniffer, DatasetKind::Whodunit] {
        let path = root.join(format!("{kind}.jsonl"));
        if !path.is_file() {
            continue;
        }
        found += 1;
        match load_jsonl(&path, kind) {
            Ok(set) => bad.extend(integrity_violations(&set, kind)),
            Err(e) => bad.push(format!("{}: {e}", path.display())),
        }
    }
    if found == 0 {
        return Outcome::Skipped(format!(
            "no ingested datasets under {} (set CODEORIGIN_DATA_DIR after `codeorigin ingest`)",
            root.display()
        ));
    }
    verdict(bad, format!("{found} ingested dataset(s) match the reference counts"))
}

fn smoke() -> Outcome {
    let data = fixture_corpus(DatasetKind::GptSniffer, 1);
    let out = tempfile::tempdir().unwrap();
    let mut opts = ReproduceOptions::new(TrainingConfig::default());
    opts.smoke = true;
    match reproduce(&data, &opts, out.path()) {
        Err(e) => Outcome::Fail(e.to_string()),
        Ok(b) => {
            let missing: Vec<_> = ["cell2/stage1/provenance.json", "cell2/stage2/provenance.json", "cell2/eval/report.json", "embeddings_full/embeddings.npy", "tsne_full.svg", "bundle.json"]
                .into_iter()
                .filter(|f| !out.path().join(f).exists())
                .collect();
            if b.main.metrics.n != 32 || !missing.is_empty() {
                Outcome::Fail(format!("n = {}, missing {missing:?}", b.main.metrics.n))
            } else {
                Outcome::Pass(format!("32-sample smoke run, accuracy {:.3} (integrity only)", b.main.metrics.accuracy))
            }
        }
    }
}

fn two_clusters(n_per_class: usize, dim: usize, seed: u64) -> Vec<Example<Array1<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signal = Normal::new(0.0, 0.3).unwrap();
    let noise = Normal::new(0.0, 1.5).unwrap();
    let mut out = Vec::new();
    for label in Label::ALL {
        let centre = if label == Label::Ai { 2.0 } else { -2.0 };
        for k in 0..n_per_class {
            let x = Array1::from_shape_fn(dim, |d| {
                if d == 0 {
                    centre + signal.sample(&mut rng)
                } else {
                    noise.sample(&mut rng)
                }
            });
            out.push(Example {
                id: format!("{}-{k}", label.name()),
                label,
                input: x,
            });
        }
    }
    out
}

fn separability() -> Outcome {
    let examples = two_clusters(128, 16, 16);
    let labels: Vec<Label> = examples.iter().map(|e| e.label).collect();
    let inputs: Vec<&Array1<f64>> = examples.iter().map(|e| &e.input).collect();
    let config = TrainingConfig {
        lr: 5e-3,
        batch_contrastive: 32,
        batch_classify: 32,
        epochs_stage1: 30,
        epochs_stage2: 30,
        tau: 0.1,
        seed: 16,
        ..TrainingConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut encoder = DenseEncoder::<f64>::new(16, 32, &mut rng, config.optimizer());
    let silhouette = |enc: &DenseEncoder<f64>| {
        let h = enc.embed(&inputs).unwrap();
        separability_score(h.view(), &labels).unwrap()
    };
    let before = silhouette(&encoder);
    let mut proj = ProjectionHead::init(32, 32, 16, &mut rng);
    if let Err(e) = train_stage1(&mut encoder, &mut proj, &examples, &config) {
        return Outcome::Fail(format!("stage 1: {e}"));
    }
    let after = silhouette(&encoder);
    let mut head = ClassifierHead::init(HeadKind::Mlp, 32, 16, &mut rng);
    if let Err(e) = train_stage2(&mut encoder, &mut head, &examples, &config) {
        return Outcome::Fail(format!("stage 2: {e}"));
    }
    let h = encoder.embed(&inputs).unwrap();
    let probs = head.probabilities(h.view()).unwrap();
    let correct = probs
        .iter()
        .zip(&labels)
        .filter(|(&p, &y)| label_for(p, 0.5) == y)
        .count();
    let acc = correct as f64 / labels.len() as f64;
    let detail = format!("train accuracy {acc:.4}; silhouette {before:.3} before stage 1, {after:.3} after");
    if acc >= 0.99 && after > before {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn bundle(dir: &Path, kind: DatasetKind) -> Option<ReproduceBundle> {
    let text = std::fs::read_to_string(dir.join(kind.as_str()).join("bundle.json")).ok()?;
    serde_json::from_str(&text).ok()
}

fn bundle_dir() -> Option<PathBuf> {
    std::env::var_os("CODEORIGIN_BUNDLE_DIR").map(PathBuf::from)
}

const NO_BUNDLE: &str = "needs a full `codeorigin reproduce` run with pretrained weights on the real datasets \
(GPU recommended); point CODEORIGIN_BUNDLE_DIR at a directory holding <benchmark>/bundle.json";

fn benchmark_reproduction() -> Outcome {
    let Some(dir) = bundle_dir() else {
        return Outcome::NotRun(NO_BUNDLE.into());
    };
    let mut bad = Vec::new();
    let mut notes = Vec::new();
    for kind in [DatasetKind::GptSniffer, DatasetKind::Whodunit] {
        let Some(b) = bundle(&dir, kind) else {
            bad.push(format!("{kind}: no readable bundle.json"));
            continue;
        };
        if b.smoke {
            bad.push(format!("{kind}: bundle is a smoke run"));
        }
        let target = paper_target(kind).unwrap();
        let tol = tolerance_pp(kind) / 100.0;
        let m = &b.main.metrics;
        notes.push(format!("{kind} acc {:.3} F1 {:.3}", m.accuracy, m.macro_f1));
        if (m.accuracy - target.accuracy).abs() > tol {
            bad.push(format!("{kind} accuracy {:.3} vs {:.3}", m.accuracy, target.accuracy));
        }
        if kind == DatasetKind::GptSniffer && (m.macro_f1 - target.macro_f1).abs() > tol {
            bad.push(format!("{kind} F1 {:.3} vs {:.3}", m.macro_f1, target.macro_f1));
        }
        if let Some(t) = &b.ablation {
            let linear = t.rows.iter().find(|r| r.name.contains("Linear") && !r.name.contains("removal"));
            if let Some(r) = linear {
                if r.metrics.accuracy > 0.70 + 0.03 {
                    bad.push(format!("linear head accuracy {:.3} above the baseline band", r.metrics.accuracy));
                }
            }
        }
    }
    verdict(bad, notes.join("; "))
}

fn embedding_direction() -> Outcome {
    let Some(dir) = bundle_dir() else {
        return Outcome::NotRun(NO_BUNDLE.into());
    };
    match bundle(&dir, DatasetKind::GptSniffer) {
        None => Outcome::Fail("no readable gptsniffer bundle.json".into()),
        Some(b) => match b.baseline_silhouette {
            None => Outcome::Fail("bundle has no baseline embeddings".into()),
            Some(base) if b.silhouette > base => {
                Outcome::Pass(format!("silhouette {:.3} > baseline {base:.3}", b.silhouette))
            }
            Some(base) => Outcome::Fail(format!("silhouette {:.3} <= baseline {base:.3}", b.silhouette)),
        },
    }
}

fn main() {
    let secs = Duration::from_secs;
    let mut r = Report { failures: 0 };
    r.check("SupCon oracle equivalence", Some(secs(10)), supcon_oracle);
    r.check("Gradient checks", Some(secs(30)), gradient_checks);
    r.check("Preprocessor properties", Some(secs(60)), preprocessor);
    r.check("Balanced batching", Some(secs(10)), batching);
    r.check("Metrics oracle", Some(secs(10)), metrics);
    r.check("Dataset integrity (fixture corpora)", None, integrity_fixture);
    r.check("Dataset integrity (ingested datasets)", None, integrity_real);
    r.check("Tiny end-to-end smoke", Some(secs(600)), smoke);
    r.check("Synthetic separability", None, separability);
    r.check("Benchmark reproduction [optional, GPU]", None, benchmark_reproduction);
    r.check("Embedding separation direction [optional, GPU]", None, embedding_direction);
    if r.failures > 0 {
        eprintln!("{} criteria failed", r.failures);
        std::process::exit(1);
    }
}
