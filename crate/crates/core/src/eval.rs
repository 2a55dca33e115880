//! Classification metrics, benchmark runs and the ablation table.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::label_for;
use crate::corpus::{DatasetKind, Label, SampleSet, Split};
use crate::error::{Error, Result};
use crate::pipeline::{prepare_set, Detector};
use crate::scalar::MetricScalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

/// Metrics over two classes; `confusion[gold][pred]`, index 0 = human.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<T> {
    pub accuracy: T,
    pub macro_precision: T,
    pub macro_recall: T,
    pub macro_f1: T,
    /// Indexed by label: human, ai.
    pub per_class: [ClassMetrics<T>; 2],
    pub confusion: [[usize; 2]; 2],
    pub n: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn ratio<T: MetricScalar>(num: usize, den: usize) -> T {
    if den == 0 {
        T::zero()
    } else {
        T::count(num) / T::count(den)
    }
}

pub fn compute_metrics<T: MetricScalar>(preds: &[Label], gold: &[Label]) -> Result<MetricsReport<T>> {
    if preds.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} gold labels",
            preds.len(),
            gold.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    let mut confusion = [[0usize; 2]; 2];
    for (p, g) in preds.iter().zip(gold) {
        confusion[g.index()][p.index()] += 1;
    }
    let mut warnings = Vec::new();
    let per_class = Label::ALL.map(|c| {
        let k = c.index();
        let tp = confusion[k][k];
        let predicted = confusion[0][k] + confusion[1][k];
        let actual = confusion[k][0] + confusion[k][1];
        if predicted == 0 && actual == 0 {
            let msg = format!("class {} absent from predictions and gold", c.name());
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let precision: T = ratio(tp, predicted);
        let recall: T = ratio(tp, actual);
        let f1 = ratio(2 * tp, predicted + actual);
        ClassMetrics { precision, recall, f1 }
    });
    let two = T::count(2);
    let mean = |f: fn(&ClassMetrics<T>) -> &T| (f(&per_class[0]).clone() + f(&per_class[1]).clone()) / two.clone();
    Ok(MetricsReport {
        accuracy: ratio(confusion[0][0] + confusion[1][1], preds.len()),
        macro_precision: mean(|c| &c.precision),
        macro_recall: mean(|c| &c.recall),
        macro_f1: mean(|c| &c.f1),
        per_class,
        confusion,
        n: preds.len(),
        warnings,
    })
}

/// One scored sample, persisted next to every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub gold: Label,
    pub pred: Label,
    pub probability: f64,
}

/// Published reference numbers for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaperTarget {
    pub accuracy: f64,
    pub macro_f1: f64,
}

pub const TOLERANCE_PP: f64 = 3.0;

/// Band around the published numbers within which a reproduction passes.
pub fn tolerance_pp(kind: DatasetKind) -> f64 {
    match kind {
        DatasetKind::Whodunit => 2.0,
        _ => TOLERANCE_PP,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Warn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetComparison {
    pub target: PaperTarget,
    pub accuracy_delta_pp: f64,
    pub f1_delta_pp: f64,
    pub verdict: Verdict,
}

impl TargetComparison {
    pub fn new(report: &MetricsReport<f64>, target: PaperTarget, tolerance_pp: f64) -> Self {
        let accuracy_delta_pp = 100.0 * (report.accuracy - target.accuracy);
        let f1_delta_pp = 100.0 * (report.macro_f1 - target.macro_f1);
        let ok = accuracy_delta_pp.abs() <= tolerance_pp && f1_delta_pp.abs() <= tolerance_pp;
        TargetComparison {
            target,
            accuracy_delta_pp,
            f1_delta_pp,
            verdict: if ok { Verdict::Pass } else { Verdict::Warn },
        }
    }
}

/// Report for one model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub model_version: String,
    pub dataset: String,
    pub dataset_version: String,
    pub metrics: MetricsReport<f64>,
    pub degraded_dfg: usize,
    pub truncated: usize,
    /// Samples left with no code after preprocessing, excluded from `n`.
    pub skipped: Vec<String>,
    pub threshold: f64,
    pub comparison: Option<TargetComparison>,
}

impl BenchmarkReport {
    pub fn to_markdown(&self) -> String {
        let m = &self.metrics;
        let mut s = format!("## {} on {}\n\n", self.model_version, self.dataset);
        s.push_str("| Acc. | Prec. | Rec. | F1 | n |\n|---|---|---|---|---|\n");
        let _ = writeln!(
            s,
            "| {:.4} | {:.4} | {:.4} | {:.4} | {} |\n",
            m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1, m.n
        );
        s.push_str("| Class | Precision | Recall | F1 |\n|---|---|---|---|\n");
        for (label, c) in Label::ALL.iter().zip(&m.per_class) {
            let _ = writeln!(s, "| {} | {:.4} | {:.4} | {:.4} |", label.name(), c.precision, c.recall, c.f1);
        }
        let _ = writeln!(
            s,
            "\nConfusion (rows gold, cols pred; human, ai): {:?}",
            m.confusion
        );
        let _ = writeln!(
            s,
            "Degraded data flow: {} of {}; truncated: {}; skipped: {}",
            self.degraded_dfg,
            m.n,
            self.truncated,
            self.skipped.len()
        );
        if let Some(c) = &self.comparison {
            let _ = writeln!(
                s,
                "Reference acc {:.3} / F1 {:.3}: delta {:+.2} pp / {:+.2} pp -> {:?}",
                c.target.accuracy, c.target.macro_f1, c.accuracy_delta_pp, c.f1_delta_pp, c.verdict
            );
        }
        s
    }

    /// Writes `report.json`, `report.md` and `predictions.jsonl`.
    pub fn write(&self, dir: &Path, predictions: &[PredictionRecord]) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        put("report.json", serde_json::to_string_pretty(self)?)?;
        put("report.md", self.to_markdown())?;
        let mut lines = String::new();
        for p in predictions {
            lines.push_str(&serde_json::to_string(p)?);
            lines.push('\n');
        }
        put("predictions.jsonl", lines)
    }
}

/// Reference results for the full model on each benchmark test split.
pub fn paper_target(kind: DatasetKind) -> Option<PaperTarget> {
    match kind {
        DatasetKind::GptSniffer => Some(PaperTarget { accuracy: 0.78, macro_f1: 0.78 }),
        DatasetKind::Whodunit => Some(PaperTarget { accuracy: 0.947, macro_f1: 0.946 }),
        DatasetKind::Augmentation => None,
    }
}

/// Scores `detector` on a test split and returns the report together with
/// per-sample predictions in input order.
pub fn run_benchmark(
    detector: &Detector,
    testset: &SampleSet,
    target: Option<PaperTarget>,
) -> Result<(BenchmarkReport, Vec<PredictionRecord>)> {
    if let Some(s) = testset.iter().find(|s| s.split != Split::Test) {
        return Err(Error::InvalidArgument(format!("sample {} is not in the test split", s.id)));
    }
    let prepared = prepare_set(detector.tokenizer(), &detector.spec, testset)?;
    let inputs: Vec<_> = prepared.examples.iter().map(|e| &e.input).collect();
    let probs = detector.probabilities(&inputs)?;
    let threshold = detector.provenance.threshold;
    let predictions: Vec<PredictionRecord> = prepared
        .examples
        .iter()
        .zip(&probs)
        .map(|(e, &p)| PredictionRecord {
            id: e.id.clone(),
            gold: e.label,
            pred: label_for(p, threshold),
            probability: p,
        })
        .collect();
    let preds: Vec<Label> = predictions.iter().map(|p| p.pred).collect();
    let gold: Vec<Label> = predictions.iter().map(|p| p.gold).collect();
    let metrics = compute_metrics::<f64>(&preds, &gold)?;
    let report = BenchmarkReport {
        model_version: detector.version().to_string(),
        dataset: testset.provenance.dataset.as_str().to_string(),
        dataset_version: testset.provenance.version.clone(),
        comparison: target.map(|t| TargetComparison::new(&metrics, t, tolerance_pp(testset.provenance.dataset))),
        metrics,
        degraded_dfg: prepared.degraded,
        truncated: prepared.truncated,
        skipped: prepared.skipped,
        threshold,
    };
    Ok((report, predictions))
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    pub metrics: MetricsReport<f64>,
    /// Accuracy and F1 differences from the first row, in points.
    pub delta_accuracy_pp: f64,
    pub delta_f1_pp: f64,
    pub comparison: Option<TargetComparison>,
    /// Set for cells that have no published counterpart.
    pub extrapolated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Builds rows with deltas against the first entry.
    pub fn from_results(
        results: Vec<(String, u64, String, MetricsReport<f64>, Option<PaperTarget>)>,
    ) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (name, _, hash, _, _) in &results {
            if !seen.insert(hash.clone()) {
                return Err(Error::DuplicateAblationCell(name.clone()));
            }
        }
        let base = results.first().map(|r| (r.3.accuracy, r.3.macro_f1));
        let rows = results
            .into_iter()
            .map(|(name, seed, config_hash, metrics, target)| {
                let (ba, bf) = base.expect("non-empty");
                AblationRow {
                    delta_accuracy_pp: 100.0 * (metrics.accuracy - ba),
                    delta_f1_pp: 100.0 * (metrics.macro_f1 - bf),
                    comparison: target.map(|t| TargetComparison::new(&metrics, t, TOLERANCE_PP)),
                    extrapolated: target.is_none(),
                    name,
                    seed,
                    config_hash,
                    metrics,
                }
            })
            .collect();
        Ok(AblationTable { rows })
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from(
            "| Configuration | Acc. | F1 | Δ Acc. (pp) | Δ F1 (pp) | Reference | Seed |\n|---|---|---|---|---|---|---|\n",
        );
        for r in &self.rows {
            let reference = match &r.comparison {
                Some(c) => format!("{:.2}/{:.2} {:?}", c.target.accuracy, c.target.macro_f1, c.verdict),
                None => "extrapolation".into(),
            };
            let _ = writeln!(
                s,
                "| {} | {:.4} | {:.4} | {:+.2} | {:+.2} | {} | {} |",
                r.name, r.metrics.accuracy, r.metrics.macro_f1, r.delta_accuracy_pp, r.delta_f1_pp, reference, r.seed
            );
        }
        s
    }
}
