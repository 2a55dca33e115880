//! End-to-end glue: preprocessing, checkpointed training stages, the
//! loaded detector, and the benchmark reproduction driver.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{write_dir_atomic, CheckpointProvenance};
use crate::classify::{label_for, train_stage2, ClassifierHead, HeadKind, PredictionResult, Stage2Report};
use crate::config::TrainingConfig;
use crate::contrastive::{train_stage1, ProjectionHead};
use crate::corpus::{DatasetKind, Language, SampleSet, Split};
use crate::dataflow::{extract_dataflow, DataFlow};
use crate::encoder::{default_device, Encoder, EncoderConfig, EncoderKind, EncoderSize, GraphCodeEncoder};
use crate::error::{Error, Result};
use crate::eval::{paper_target, run_benchmark, AblationTable, BenchmarkReport, PaperTarget};
use crate::optim::AdamWConfig;
use crate::preprocess::{normalize, strip_comments_with, StripOptions};
use crate::tokenize::{CodeTokenizer, TokenizedInput, TokenizerKind};
use crate::train::{Example, TrainingLog};
use crate::visualize::{export_embeddings, plot_points, separability_score, tsne, TsneParams};

/// Everything that decides how raw source becomes encoder input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub encoder_kind: EncoderKind,
    pub strip: Option<StripOptions>,
    pub max_seq_len: usize,
    pub max_dfg_nodes: usize,
}

impl InputSpec {
    pub fn from_config(c: &TrainingConfig) -> Self {
        InputSpec {
            encoder_kind: c.encoder_kind,
            strip: c.strip_comments.then_some(StripOptions {
                strip_docstrings: c.strip_docstrings,
            }),
            max_seq_len: c.max_seq_len,
            max_dfg_nodes: c.max_dfg_nodes,
        }
    }

    pub fn from_provenance(p: &CheckpointProvenance) -> Self {
        InputSpec {
            encoder_kind: p.encoder_kind,
            strip: p.strip_comments.then_some(StripOptions {
                strip_docstrings: p.strip_docstrings,
            }),
            max_seq_len: p.max_seq_len,
            max_dfg_nodes: p.max_dfg_nodes,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub input: TokenizedInput,
    pub cleaned: String,
    pub comment_bytes: usize,
}

/// Strip (per `spec`), extract data flow, tokenize. Errors with
/// [`Error::NoCodeContent`] when nothing but whitespace remains.
pub fn prepare_input(tk: &CodeTokenizer, spec: &InputSpec, source: &str, language: Language) -> Result<Prepared> {
    let (cleaned, comment_bytes) = match spec.strip {
        Some(opts) => {
            let r = strip_comments_with(source, language, opts);
            (normalize(&r.cleaned), r.comment_bytes)
        }
        None => (source.to_string(), 0),
    };
    if cleaned.trim().is_empty() {
        return Err(Error::NoCodeContent);
    }
    let flow = if spec.encoder_kind.uses_dataflow() {
        extract_dataflow(&cleaned, language)
    } else {
        DataFlow::default()
    };
    let input = tk.tokenize(&cleaned, &flow, spec.max_seq_len, spec.max_dfg_nodes)?;
    Ok(Prepared {
        input,
        cleaned,
        comment_bytes,
    })
}

#[derive(Debug, Clone, Default)]
pub struct PreparedSet {
    pub examples: Vec<Example<TokenizedInput>>,
    /// Samples with no code left after preprocessing.
    pub skipped: Vec<String>,
    pub degraded: usize,
    pub truncated: usize,
}

pub fn prepare_set(tk: &CodeTokenizer, spec: &InputSpec, set: &SampleSet) -> Result<PreparedSet> {
    let mut out = PreparedSet::default();
    for s in set.iter() {
        match prepare_input(tk, spec, &s.source, s.language) {
            Ok(p) => {
                out.degraded += usize::from(spec.encoder_kind.uses_dataflow() && p.input.degraded_dfg);
                out.truncated += usize::from(p.input.truncated);
                out.examples.push(Example {
                    id: s.id.clone(),
                    label: s.label,
                    input: p.input,
                });
            }
            Err(Error::NoCodeContent) => {
                log::warn!("sample {} has no code content after preprocessing; skipped", s.id);
                out.skipped.push(s.id.clone());
            }
            Err(e) => return Err(e),
        }
    }
    if !out.examples.is_empty() {
        log::info!(
            "prepared {} samples: {} degraded data flow, {} truncated, {} skipped",
            out.examples.len(),
            out.degraded,
            out.truncated,
            out.skipped.len()
        );
    }
    Ok(out)
}

/// Vocabulary from the pretrained directory when it has one, else raw bytes.
pub fn load_tokenizer(config: &TrainingConfig) -> Result<(CodeTokenizer, Option<PathBuf>)> {
    match &config.encoder_weights {
        Some(dir) if dir.join("vocab.json").exists() => Ok((CodeTokenizer::from_dir(dir)?, Some(dir.clone()))),
        _ => Ok((CodeTokenizer::byte_level(), None)),
    }
}

pub fn init_encoder(config: &TrainingConfig, tk: &CodeTokenizer) -> Result<GraphCodeEncoder> {
    let device = default_device();
    match &config.encoder_weights {
        Some(dir) => GraphCodeEncoder::load(dir, config.encoder_kind, tk.special(), config.optimizer(), device),
        None => {
            log::warn!(
                "no pretrained weights configured; initializing a {:?} encoder from seed {}",
                config.encoder_size,
                config.seed
            );
            let cfg = EncoderConfig::preset(config.encoder_size, tk.vocab_size());
            GraphCodeEncoder::init(cfg, config.encoder_kind, tk.special(), config.seed, config.optimizer(), device)
        }
    }
}

fn load_checkpoint_tokenizer(dir: &Path, p: &CheckpointProvenance) -> Result<CodeTokenizer> {
    match p.tokenizer {
        TokenizerKind::ByteLevel => Ok(CodeTokenizer::byte_level()),
        TokenizerKind::Bpe => CodeTokenizer::from_dir(&dir.join("tokenizer")),
    }
}

fn save_common(
    dir: &Path,
    config: &TrainingConfig,
    tk: &CodeTokenizer,
    vocab_dir: Option<&Path>,
    encoder: &GraphCodeEncoder,
    log: &TrainingLog,
    provenance: &CheckpointProvenance,
) -> Result<()> {
    let enc = dir.join("encoder");
    std::fs::create_dir_all(&enc).map_err(|e| Error::io(&enc, e))?;
    encoder.save(&enc)?;
    if tk.kind() == TokenizerKind::Bpe {
        let t = dir.join("tokenizer");
        std::fs::create_dir_all(&t).map_err(|e| Error::io(&t, e))?;
        tk.save(vocab_dir, &t)?;
    }
    let cfg = dir.join("config.toml");
    std::fs::write(&cfg, config.to_toml()).map_err(|e| Error::io(&cfg, e))?;
    log.write_csv(&dir.join("training_log.csv"))?;
    provenance.write(dir)
}

/// Runs Stage 1 on `train` and writes the checkpoint to `out`.
pub fn run_stage1(config: &TrainingConfig, train: &SampleSet, out: &Path) -> Result<(CheckpointProvenance, TrainingLog)> {
    config.validate()?;
    let (tk, vocab_dir) = load_tokenizer(config)?;
    let spec = InputSpec::from_config(config);
    let prepared = prepare_set(&tk, &spec, train)?;
    let mut encoder = init_encoder(config, &tk)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0001);
    let mut head = ProjectionHead::<f32>::init(
        Encoder::<f32>::hidden_size(&encoder),
        config.proj_hidden,
        config.proj_out,
        &mut rng,
    );
    let log = train_stage1(&mut encoder, &mut head, &prepared.examples, config)?;
    let means = log.epoch_means();
    if means.len() >= 2 && means.last() >= means.first() {
        log::warn!("stage 1 loss did not decrease: first epoch {:.4}, last {:.4}", means[0], means[means.len() - 1]);
    }
    let mut prov = CheckpointProvenance::new(1, config, tk.kind());
    prov.dataset = Some(train.provenance.dataset.as_str().into());
    prov.dataset_version = Some(train.provenance.version.clone());
    write_dir_atomic(out, |dir| {
        save_common(dir, config, &tk, vocab_dir.as_deref(), &encoder, &log, &prov)?;
        head.save(dir)
    })?;
    Ok((prov, log))
}

/// Runs Stage 2 from a Stage-1 checkpoint, or from the configured base
/// encoder when `init` is `None`, and writes the checkpoint to `out`.
pub fn run_stage2(
    config: &TrainingConfig,
    init: Option<&Path>,
    train: &SampleSet,
    out: &Path,
) -> Result<(CheckpointProvenance, Stage2Report)> {
    config.validate()?;
    let (tk, vocab_dir, mut encoder, parent) = match init {
        Some(dir) => {
            let p = CheckpointProvenance::read(dir)?;
            if p.strip_comments != config.strip_comments {
                return Err(Error::PreprocessingMismatch {
                    trained: p.strip_comments,
                    requested: config.strip_comments,
                });
            }
            if p.encoder_kind != config.encoder_kind {
                return Err(Error::Checkpoint(format!(
                    "stage 1 checkpoint uses {} but config asks for {}",
                    p.encoder_kind, config.encoder_kind
                )));
            }
            let tk = load_checkpoint_tokenizer(dir, &p)?;
            let enc = GraphCodeEncoder::load(&dir.join("encoder"), p.encoder_kind, tk.special(), config.optimizer(), default_device())?;
            let vocab = (p.tokenizer == TokenizerKind::Bpe).then(|| dir.join("tokenizer"));
            (tk, vocab, enc, Some(p.model_version))
        }
        None => {
            let (tk, vocab) = load_tokenizer(config)?;
            let enc = init_encoder(config, &tk)?;
            (tk, vocab, enc, None)
        }
    };
    let spec = InputSpec::from_config(config);
    let prepared = prepare_set(&tk, &spec, train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0002);
    let mut head = ClassifierHead::<f32>::init(
        config.head_kind,
        Encoder::<f32>::hidden_size(&encoder),
        config.cls_hidden,
        &mut rng,
    );
    let report = train_stage2(&mut encoder, &mut head, &prepared.examples, config)?;
    let mut prov = CheckpointProvenance::new(2, config, tk.kind());
    prov.parent = parent;
    prov.dataset = Some(train.provenance.dataset.as_str().into());
    prov.dataset_version = Some(train.provenance.version.clone());
    write_dir_atomic(out, |dir| {
        save_common(dir, config, &tk, vocab_dir.as_deref(), &encoder, &report.log, &prov)?;
        head.save(dir)?;
        let r = dir.join("stage2_report.json");
        std::fs::write(&r, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&r, e))
    })?;
    Ok((prov, report))
}

/// A loaded Stage-2 model. Immutable; safe to share between threads.
#[derive(Debug)]
pub struct Detector {
    pub provenance: CheckpointProvenance,
    pub spec: InputSpec,
    tokenizer: CodeTokenizer,
    encoder: GraphCodeEncoder,
    head: ClassifierHead<f32>,
}

impl Detector {
    pub fn load(dir: &Path) -> Result<Self> {
        let provenance = CheckpointProvenance::read(dir)?;
        if provenance.stage != 2 {
            return Err(Error::Checkpoint(format!(
                "{} is a stage {} checkpoint; prediction needs stage 2",
                dir.display(),
                provenance.stage
            )));
        }
        let kind = provenance
            .head_kind
            .ok_or_else(|| Error::Checkpoint("stage 2 checkpoint without head kind".into()))?;
        let tokenizer = load_checkpoint_tokenizer(dir, &provenance)?;
        let encoder = GraphCodeEncoder::load(
            &dir.join("encoder"),
            provenance.encoder_kind,
            tokenizer.special(),
            AdamWConfig::default(),
            default_device(),
        )?;
        let head = ClassifierHead::load(dir, kind)?;
        if head.input_dim() != encoder.config.hidden_size {
            return Err(Error::Checkpoint("classifier width does not match encoder".into()));
        }
        Ok(Detector {
            spec: InputSpec::from_provenance(&provenance),
            provenance,
            tokenizer,
            encoder,
            head,
        })
    }

    pub fn version(&self) -> &str {
        &self.provenance.model_version
    }

    pub fn tokenizer(&self) -> &CodeTokenizer {
        &self.tokenizer
    }

    pub fn prepare(&self, source: &str, language: Language) -> Result<Prepared> {
        prepare_input(&self.tokenizer, &self.spec, source, language)
    }

    pub fn embed(&self, inputs: &[&TokenizedInput]) -> Result<Array2<f32>> {
        self.encoder.embed_all(inputs, 16)
    }

    pub fn probabilities(&self, inputs: &[&TokenizedInput]) -> Result<Vec<f64>> {
        let h = self.embed(inputs)?;
        Ok(self
            .head
            .probabilities(h.view())?
            .iter()
            .map(|&p| p as f64)
            .collect())
    }

    /// Predicts with the model's own preprocessing. `language` is guessed
    /// when absent; `threshold` defaults to the trained one.
    pub fn predict(&self, source: &str, language: Option<Language>, threshold: Option<f64>) -> Result<PredictionResult> {
        let threshold = threshold.unwrap_or(self.provenance.threshold);
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidArgument(format!("threshold must be in (0, 1), got {threshold}")));
        }
        let language = language.unwrap_or_else(|| Language::guess(source));
        let prepared = self.prepare(source, language)?;
        let probability = self.probabilities(&[&prepared.input])?[0];
        Ok(PredictionResult {
            probability,
            label: label_for(probability, threshold),
            threshold,
            degraded_dfg: self.spec.encoder_kind.uses_dataflow() && prepared.input.degraded_dfg,
            model_version: self.version().to_string(),
        })
    }

    /// Like [`Detector::predict`], refusing a comment-stripping setting that
    /// differs from the one used in training.
    pub fn predict_checked(
        &self,
        source: &str,
        language: Option<Language>,
        threshold: Option<f64>,
        strip_comments: Option<bool>,
    ) -> Result<PredictionResult> {
        if let Some(requested) = strip_comments {
            if requested != self.provenance.strip_comments {
                return Err(Error::PreprocessingMismatch {
                    trained: self.provenance.strip_comments,
                    requested,
                });
            }
        }
        self.predict(source, language, threshold)
    }
}

/// Options for [`reproduce`].
#[derive(Debug, Clone)]
pub struct ReproduceOptions {
    pub config: TrainingConfig,
    /// 16 samples per class from each split, one epoch per stage, tiny
    /// encoder; checks pipeline integrity only.
    pub smoke: bool,
    /// Train the reference ablation rows (GPTSniffer only).
    pub ablation: bool,
    /// Also train the two head × stripping cells without published numbers.
    pub full_grid: bool,
    /// Weights for the CodeBERT baseline row; defaults to `config.encoder_weights`.
    pub baseline_weights: Option<PathBuf>,
    pub tsne: TsneParams,
}

impl ReproduceOptions {
    pub fn new(config: TrainingConfig) -> Self {
        ReproduceOptions {
            config,
            smoke: false,
            ablation: true,
            full_grid: false,
            baseline_weights: None,
            tsne: TsneParams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReproduceBundle {
    pub benchmark: String,
    pub smoke: bool,
    pub config_hash: String,
    pub main: BenchmarkReport,
    /// Published result of the prior system on this benchmark.
    pub published_baseline: Option<PaperTarget>,
    pub ablation: Option<AblationTable>,
    pub silhouette: f64,
    pub baseline_silhouette: Option<f64>,
    pub tsne: TsneParams,
}

impl ReproduceBundle {
    pub fn to_markdown(&self) -> String {
        let mut s = format!("# Reproduction: {}{}\n\n", self.benchmark, if self.smoke { " (smoke)" } else { "" });
        if self.smoke {
            s.push_str("Smoke run: tiny encoder, 32-sample subsample, one epoch per stage. Numbers check pipeline integrity only.\n\n");
        }
        s.push_str(&self.main.to_markdown());
        if let Some(b) = &self.published_baseline {
            let m = &self.main.metrics;
            s.push_str(&format!(
                "\nAgainst the published prior system (acc {:.3}, F1 {:.3}): {:+.2} pp accuracy, {:+.2} pp F1\n",
                b.accuracy,
                b.macro_f1,
                100.0 * (m.accuracy - b.accuracy),
                100.0 * (m.macro_f1 - b.macro_f1)
            ));
        }
        if let Some(t) = &self.ablation {
            s.push_str("\n## Ablation\n\n");
            s.push_str(&t.to_markdown());
        }
        s.push_str(&format!("\n## Embeddings\n\nSilhouette (full model, test split): {:.4}\n", self.silhouette));
        if let Some(b) = self.baseline_silhouette {
            s.push_str(&format!(
                "Silhouette (baseline): {:.4}; full model {} baseline\n",
                b,
                if self.silhouette > b { "exceeds" } else { "does not exceed" }
            ));
        }
        s.push_str(&format!(
            "t-SNE: perplexity {}, {} iterations, seed {}\n",
            self.tsne.perplexity, self.tsne.iterations, self.tsne.seed
        ));
        s
    }
}

fn published_baseline(kind: DatasetKind) -> Option<PaperTarget> {
    match kind {
        DatasetKind::GptSniffer => Some(PaperTarget { accuracy: 0.70, macro_f1: 0.68 }),
        DatasetKind::Whodunit => Some(PaperTarget { accuracy: 0.91, macro_f1: 0.91 }),
        DatasetKind::Augmentation => None,
    }
}

/// Settings used by `--smoke`.
pub fn smoke_config(base: &TrainingConfig) -> TrainingConfig {
    TrainingConfig {
        epochs_stage1: 1,
        epochs_stage2: 1,
        encoder_size: EncoderSize::Tiny,
        encoder_weights: None,
        ..base.clone()
    }
}

struct Cell {
    name: &'static str,
    config: TrainingConfig,
    target: Option<PaperTarget>,
}

/// Trains (one or two stages) and scores one configuration under `dir`.
pub fn train_and_evaluate(
    config: &TrainingConfig,
    train: &SampleSet,
    test: &SampleSet,
    target: Option<PaperTarget>,
    dir: &Path,
) -> Result<(BenchmarkReport, PathBuf)> {
    let stage2 = dir.join("stage2");
    if config.contrastive {
        let stage1 = dir.join("stage1");
        run_stage1(config, train, &stage1)?;
        run_stage2(config, Some(&stage1), train, &stage2)?;
    } else {
        run_stage2(config, None, train, &stage2)?;
    }
    let detector = Detector::load(&stage2)?;
    let (report, preds) = run_benchmark(&detector, test, target)?;
    report.write(&dir.join("eval"), &preds)?;
    Ok((report, stage2))
}

fn benchmark_splits(data: &SampleSet, config: &TrainingConfig, smoke: bool) -> Result<(SampleSet, SampleSet)> {
    let kind = data.provenance.dataset;
    let (mut train, mut test) = (data.split(Split::Train), data.split(Split::Test));
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} needs both train and test splits ({} train, {} test)",
            kind,
            train.len(),
            test.len()
        )));
    }
    if smoke {
        train = train.stratified_subsample(16, config.seed);
        test = test.stratified_subsample(16, config.seed);
    }
    Ok((train, test))
}

/// The main configuration last, preceded by the ablation rows when requested.
fn build_cells(config: &TrainingConfig, kind: DatasetKind, opts: &ReproduceOptions, ablation: bool) -> Vec<Cell> {
    let mut cells = Vec::new();
    if ablation {
        let baseline = TrainingConfig {
            encoder_kind: EncoderKind::CodeBert,
            contrastive: false,
            head_kind: HeadKind::Linear,
            strip_comments: false,
            encoder_weights: opts.baseline_weights.clone().or_else(|| config.encoder_weights.clone()),
            ..config.clone()
        };
        let linear = TrainingConfig {
            head_kind: HeadKind::Linear,
            strip_comments: false,
            ..config.clone()
        };
        cells.push(Cell {
            name: "CodeBERT + BCE (baseline)",
            config: baseline,
            target: published_baseline(kind),
        });
        cells.push(Cell {
            name: "GraphCodeBERT + SupCon + Linear",
            config: linear,
            target: Some(PaperTarget { accuracy: 0.70, macro_f1: 0.67 }),
        });
    }
    cells.push(Cell {
        name: "GraphCodeBERT + SupCon + MLP",
        config: config.clone(),
        target: paper_target(kind),
    });
    if ablation && opts.full_grid {
        cells.push(Cell {
            name: "GraphCodeBERT + SupCon + Linear + comment removal",
            config: TrainingConfig { head_kind: HeadKind::Linear, ..config.clone() },
            target: None,
        });
        cells.push(Cell {
            name: "GraphCodeBERT + SupCon + MLP, comments kept",
            config: TrainingConfig { strip_comments: false, ..config.clone() },
            target: None,
        });
    }
    cells
}

struct TrainedCell {
    report: BenchmarkReport,
    model: PathBuf,
}

fn train_cells(cells: &[Cell], train: &SampleSet, test: &SampleSet, out: &Path) -> Result<Vec<TrainedCell>> {
    let mut done = Vec::with_capacity(cells.len());
    for (i, cell) in cells.iter().enumerate() {
        log::info!("training cell {}: {}", i, cell.name);
        let dir = out.join(format!("cell{i}"));
        let (report, model) = train_and_evaluate(&cell.config, train, test, cell.target, &dir)?;
        done.push(TrainedCell { report, model });
    }
    Ok(done)
}

fn write_ablation(cells: &[Cell], trained: &[TrainedCell], out: &Path) -> Result<AblationTable> {
    let results = cells
        .iter()
        .zip(trained)
        .map(|(c, t)| (c.name.to_string(), c.config.seed, c.config.hash(), t.report.metrics.clone(), c.target))
        .collect();
    let table = AblationTable::from_results(results)?;
    let p = out.join("ablation.json");
    std::fs::write(&p, serde_json::to_string_pretty(&table)?).map_err(|e| Error::io(&p, e))?;
    let p = out.join("ablation.md");
    std::fs::write(&p, table.to_markdown()).map_err(|e| Error::io(&p, e))?;
    Ok(table)
}

/// Trains and scores the ablation rows on one benchmark; writes
/// `ablation.json` and `ablation.md` under `out`.
pub fn ablate(data: &SampleSet, opts: &ReproduceOptions, out: &Path) -> Result<AblationTable> {
    let config = if opts.smoke { smoke_config(&opts.config) } else { opts.config.clone() };
    config.validate()?;
    let (train, test) = benchmark_splits(data, &config, opts.smoke)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cells = build_cells(&config, data.provenance.dataset, opts, true);
    let trained = train_cells(&cells, &train, &test, out)?;
    write_ablation(&cells, &trained, out)
}

/// Full two-stage pipeline, evaluation, ablation and embedding plots for
/// one benchmark. Everything lands under `out`.
pub fn reproduce(data: &SampleSet, opts: &ReproduceOptions, out: &Path) -> Result<ReproduceBundle> {
    let kind = data.provenance.dataset;
    let config = if opts.smoke { smoke_config(&opts.config) } else { opts.config.clone() };
    config.validate()?;
    let (train, test) = benchmark_splits(data, &config, opts.smoke)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let run_ablation = opts.ablation && kind == DatasetKind::GptSniffer;
    let cells = build_cells(&config, kind, opts, run_ablation);
    let trained = train_cells(&cells, &train, &test, out)?;
    let main_index = cells.iter().position(|c| c.config == config).expect("main cell present");
    let main_report = trained[main_index].report.clone();
    let main_model = trained[main_index].model.clone();
    let baseline_model = run_ablation.then(|| trained[0].model.clone());
    let ablation = if run_ablation { Some(write_ablation(&cells, &trained, out)?) } else { None };

    let n = test.len();
    let mut tsne_params = opts.tsne;
    let max_perplexity = ((n as f64 - 1.0) / 3.0).floor();
    if tsne_params.perplexity >= max_perplexity {
        log::warn!("perplexity {} too large for {n} points; using {max_perplexity}", tsne_params.perplexity);
        tsne_params.perplexity = max_perplexity;
    }
    let embed = |model: &Path, tag: &str| -> Result<f64> {
        let detector = Detector::load(model)?;
        let dump = export_embeddings(&detector, &test)?;
        dump.save(&out.join(format!("embeddings_{tag}")))?;
        let points = tsne(dump.vectors.view(), &tsne_params)?;
        plot_points(points.view(), &dump.labels, &format!("t-SNE of test [CLS] embeddings ({tag})"), &out.join(format!("tsne_{tag}.svg")))?;
        Ok(separability_score(dump.vectors.view(), &dump.labels)? as f64)
    };
    let silhouette = embed(&main_model, "full")?;
    let baseline_silhouette = baseline_model.as_deref().map(|m| embed(m, "baseline")).transpose()?;

    let bundle = ReproduceBundle {
        benchmark: kind.as_str().to_string(),
        smoke: opts.smoke,
        config_hash: config.hash(),
        main: main_report,
        published_baseline: published_baseline(kind),
        ablation,
        silhouette,
        baseline_silhouette,
        tsne: tsne_params,
    };
    let p = out.join("bundle.json");
    std::fs::write(&p, serde_json::to_string_pretty(&bundle)?).map_err(|e| Error::io(&p, e))?;
    let p = out.join("summary.md");
    std::fs::write(&p, bundle.to_markdown()).map_err(|e| Error::io(&p, e))?;
    Ok(bundle)
}
