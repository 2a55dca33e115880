mod manifest;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use codeorigin_core::corpus::synthetic::fixture_corpus;
use codeorigin_core::corpus::{
    convert_hub_layout, ingest_augmentation, load_jsonl, resolve_locator, verify_stats, DatasetKind, Language, SampleSet, Split,
};
use codeorigin_core::eval::{paper_target, run_benchmark};
use codeorigin_core::pipeline::{ablate, reproduce, run_stage1, run_stage2, Detector, ReproduceOptions};
use codeorigin_core::preprocess::{normalize, strip_comments_with, StripOptions};
use codeorigin_core::visualize::{export_embeddings, plot_points, separability_score, tsne, EmbeddingDump, TsneParams};
use codeorigin_core::TrainingConfig;
use codeorigin_service::{ServiceConfig, DEFAULT_MODEL};
use serde_json::json;

use manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(name = "codeorigin", version, about = "Detect LLM-generated source code")]
struct Cli {
    /// Base directory for relative paths, datasets and run manifests.
    #[arg(long, global = true, default_value = ".", env = "CODEORIGIN_WORKDIR")]
    workdir: PathBuf,
    /// TOML config file, or `default` for the built-in hyperparameters.
    #[arg(long, global = true, default_value = "default")]
    config: String,
    /// Override one config key (`key=value`); repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where dataset names resolve to `<kind>.jsonl` (default `<workdir>/data`).
    #[arg(long, global = true, env = "CODEORIGIN_DATA_DIR")]
    data_root: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a dataset to canonical JSONL under the data root.
    Ingest(IngestArgs),
    /// Strip comments from a JSONL dataset.
    Preprocess(PreprocessArgs),
    /// Contrastive fine-tuning of the encoder.
    TrainStage1(TrainArgs),
    /// Classifier training on top of the (optionally stage-1) encoder.
    TrainStage2(TrainStage2Args),
    /// Score a checkpoint on a test split.
    Eval(EvalArgs),
    /// Train and score the ablation rows.
    Ablate(BenchArgs),
    /// Dump [CLS] embeddings of a split.
    ExportEmbeddings(ExportArgs),
    /// t-SNE plot and silhouette of exported embeddings.
    Visualize(VisualizeArgs),
    /// Classify one file (or stdin).
    Predict(PredictArgs),
    /// Run the HTTP inference service.
    Serve(ServeArgs),
    /// Full pipeline, evaluation, ablation and plots for one benchmark.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// gptsniffer, whodunit or augmentation.
    #[arg(long)]
    dataset: DatasetKind,
    /// Downloaded hub layout (directory tree, CSV, JSON or JSONL).
    #[arg(long, conflicts_with = "fixture")]
    source: Option<PathBuf>,
    /// Generate the synthetic fixture corpus instead of reading a source.
    #[arg(long)]
    fixture: bool,
    /// Human-written files (directory or JSONL) merged into the train split.
    #[arg(long)]
    augment: Option<PathBuf>,
    /// Language for files whose extension says nothing.
    #[arg(long)]
    language: Option<Language>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    kind: Option<DatasetKind>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    kind: Option<DatasetKind>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainStage2Args {
    #[command(flatten)]
    train: TrainArgs,
    /// Stage-1 checkpoint to start from.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    kind: Option<DatasetKind>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    kind: Option<DatasetKind>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    smoke: bool,
    /// Also train the two head × stripping cells without published numbers.
    #[arg(long)]
    full_grid: bool,
    /// Encoder weights for the CodeBERT baseline row.
    #[arg(long)]
    baseline_weights: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    kind: Option<DatasetKind>,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct VisualizeArgs {
    /// Directory written by export-embeddings.
    #[arg(long)]
    embeddings: PathBuf,
    /// SVG path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Source file; `-` or absent reads stdin.
    file: Option<PathBuf>,
    #[arg(long)]
    language: Option<Language>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, env = "CODEORIGIN_BIND", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// `key=checkpoint_dir`; repeatable. Keys: gptsniffer, whodunit.
    #[arg(long = "model", env = "CODEORIGIN_MODELS", value_delimiter = ',')]
    models: Vec<String>,
    #[arg(long, default_value = DEFAULT_MODEL)]
    default_model: String,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 16)]
    queue: usize,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    /// gptsniffer or whodunit.
    benchmark: DatasetKind,
    /// Dataset locator; defaults to the benchmark name.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    smoke: bool,
    #[arg(long)]
    no_ablation: bool,
    #[arg(long)]
    full_grid: bool,
    #[arg(long)]
    baseline_weights: Option<PathBuf>,
    #[arg(long)]
    perplexity: Option<f64>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Preprocess(_) => "preprocess",
            Command::TrainStage1(_) => "train-stage1",
            Command::TrainStage2(_) => "train-stage2",
            Command::Eval(_) => "eval",
            Command::Ablate(_) => "ablate",
            Command::ExportEmbeddings(_) => "export-embeddings",
            Command::Visualize(_) => "visualize",
            Command::Predict(_) => "predict",
            Command::Serve(_) => "serve",
            Command::Reproduce(_) => "reproduce",
        }
    }
}

struct Ctx {
    workdir: PathBuf,
    data_root: PathBuf,
    config: TrainingConfig,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }

    fn dataset(&self, locator: &str, kind: Option<DatasetKind>, m: &mut RunManifest) -> anyhow::Result<SampleSet> {
        let kind = match kind {
            Some(k) => k,
            None => infer_kind(locator)?,
        };
        let direct = self.path(Path::new(locator));
        let loc = if direct.exists() { direct.to_string_lossy().into_owned() } else { locator.to_string() };
        let path = resolve_locator(&loc, kind, &self.data_root)?;
        m.inputs.push(path.clone());
        Ok(load_jsonl(&path, kind)?)
    }

    fn run_dir(&self, kind: DatasetKind, leaf: &str) -> PathBuf {
        self.workdir.join("runs").join(kind.as_str()).join(leaf)
    }
}

fn infer_kind(locator: &str) -> anyhow::Result<DatasetKind> {
    if let Ok(k) = locator.parse() {
        return Ok(k);
    }
    let stem = Path::new(locator).file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    stem.parse()
        .map_err(|_| anyhow!("cannot tell which dataset {locator:?} is; pass --kind"))
}

fn load_config(cli: &Cli) -> anyhow::Result<(TrainingConfig, String)> {
    let (base, source) = if cli.config == "default" {
        (TrainingConfig::default(), "default".to_string())
    } else {
        let path = if Path::new(&cli.config).is_absolute() {
            PathBuf::from(&cli.config)
        } else {
            cli.workdir.join(&cli.config)
        };
        (TrainingConfig::from_file(&path)?, path.display().to_string())
    };
    let mut pairs = Vec::new();
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects key=value, got {o:?}"))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = cli.seed {
        pairs.push(("seed".to_string(), seed.to_string()));
    }
    let config = base.with_overrides(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    config.validate()?;
    Ok((config, source))
}

fn print_json(value: &serde_json::Value) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn ingest(ctx: &Ctx, a: &IngestArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    let mut set = if a.fixture {
        fixture_corpus(a.dataset, ctx.config.seed)
    } else if let Some(src) = &a.source {
        let src = ctx.path(src);
        m.inputs.push(src.clone());
        let fallback = a.language.unwrap_or(match a.dataset {
            DatasetKind::GptSniffer => Language::Java,
            _ => Language::Other,
        });
        if a.dataset == DatasetKind::Augmentation {
            ingest_augmentation(&src)?
        } else {
            convert_hub_layout(&src, a.dataset, fallback)?
        }
    } else if a.augment.is_none() {
        bail!("ingest needs --source, --fixture or --augment");
    } else {
        SampleSet::new(Vec::new(), codeorigin_core::corpus::Provenance { dataset: a.dataset, version: "empty".into() })?
    };
    if let Some(aug) = &a.augment {
        let aug = ctx.path(aug);
        m.inputs.push(aug.clone());
        set = set.merged(&ingest_augmentation(&aug)?)?;
    }
    let out = match &a.output {
        Some(p) => ctx.path(p),
        None => ctx.data_root.join(format!("{}.jsonl", a.dataset.as_str())),
    };
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    set.write_jsonl(&out)?;
    m.outputs.push(out.clone());
    let (stats, warnings) = verify_stats(&set);
    for w in &warnings {
        log::warn!("{:?} split differs from the published counts: expected {:?}, found {:?}", w.split, w.expected, w.observed);
    }
    print_json(&json!({
        "output": out,
        "samples": set.len(),
        "stats": stats,
        "count_warnings": warnings.len(),
    }))
}

fn preprocess(ctx: &Ctx, a: &PreprocessArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    let set = ctx.dataset(&a.dataset, a.kind, m)?;
    let out = ctx.path(&a.output);
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let opts = StripOptions { strip_docstrings: ctx.config.strip_docstrings };
    let mut buf = Vec::new();
    let mut degraded = 0usize;
    for s in set.iter() {
        let r = strip_comments_with(&s.source, s.language, opts);
        if r.degraded() {
            degraded += 1;
        }
        let mut v = serde_json::to_value(s)?;
        v["source"] = json!(normalize(&r.cleaned));
        v["removed_comment_bytes"] = json!(r.comment_bytes);
        serde_json::to_writer(&mut buf, &v)?;
        buf.push(b'\n');
    }
    codeorigin_core::checkpoint::write_file_atomic(&out, &buf)?;
    m.outputs.push(out.clone());
    print_json(&json!({ "output": out, "samples": set.len(), "degraded": degraded }))
}

fn train_stage1(ctx: &Ctx, a: &TrainArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    let set = ctx.dataset(&a.dataset, a.kind, m)?;
    let out = a.out.as_deref().map(|p| ctx.path(p)).unwrap_or_else(|| ctx.run_dir(set.provenance.dataset, "stage1"));
    let (prov, log) = run_stage1(&ctx.config, &set.split(Split::Train), &out)?;
    m.outputs.push(out.clone());
    let last = log.epoch_means().last().copied();
    print_json(&json!({ "checkpoint": out, "model_version": prov.model_version, "final_epoch_loss": last }))
}

fn train_stage2(ctx: &Ctx, a: &TrainStage2Args, m: &mut RunManifest) -> anyhow::Result<()> {
    let set = ctx.dataset(&a.train.dataset, a.train.kind, m)?;
    let out = a.train.out.as_deref().map(|p| ctx.path(p)).unwrap_or_else(|| ctx.run_dir(set.provenance.dataset, "stage2"));
    let init = a.init.as_deref().map(|p| ctx.path(p));
    if let Some(i) = &init {
        m.inputs.push(i.clone());
    }
    let (prov, report) = run_stage2(&ctx.config, init.as_deref(), &set.split(Split::Train), &out)?;
    m.outputs.push(out.clone());
    print_json(&json!({
        "checkpoint": out,
        "model_version": prov.model_version,
        "dev_macro_f1": report.dev_macro_f1,
        "best_epoch": report.best_epoch,
    }))
}

fn eval(ctx: &Ctx, a: &EvalArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    let model = ctx.path(&a.model);
    m.inputs.push(model.clone());
    let detector = Detector::load(&model)?;
    let set = ctx.dataset(&a.dataset, a.kind, m)?;
    let kind = set.provenance.dataset;
    let (report, preds) = run_benchmark(&detector, &set.split(Split::Test), paper_target(kind))?;
    let out = a.out.as_deref().map(|p| ctx.path(p)).unwrap_or_else(|| model.join(format!("eval-{}", kind.as_str())));
    report.write(&out, &preds)?;
    m.outputs.push(out.clone());
    print_json(&json!({
        "report": out,
        "accuracy": report.metrics.accuracy,
        "macro_f1": report.metrics.macro_f1,
        "n": report.metrics.n,
        "skipped": report.skipped,
    }))
}

fn run_ablate(ctx: &Ctx, a: &BenchArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    let set = ctx.dataset(&a.dataset, a.kind, m)?;
    let out = a.out.as_deref().map(|p| ctx.path(p)).unwrap_or_else(|| ctx.run_dir(set.provenance.dataset, "ablation"));
    let opts = ReproduceOptions {
        smoke: a.smoke,
        full_grid: a.full_grid,
        baseline_weights: a.baseline_weights.as_deref().map(|p| ctx.path(p)),
        ..ReproduceOptions::new(ctx.config.clone())
    };
    let table = ablate(&set, &opts, &out)?;
    m.outputs.push(out.clone());
    print!("{}", table.to_markdown());
    Ok(())
}

fn export(ctx: &Ctx, a: &ExportArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    let model = ctx.path(&a.model);
    m.inputs.push(model.clone());
    let detector = Detector::load(&model)?;
    let set = ctx.dataset(&a.dataset, a.kind, m)?.split(a.split);
    let dump = export_embeddings(&detector, &set)?;
    let out = ctx.path(&a.out);
    dump.save(&out)?;
    m.outputs.push(out.clone());
    print_json(&json!({ "output": out, "points": dump.len(), "dim": dump.vectors.ncols() }))
}

fn visualize(ctx: &Ctx, a: &VisualizeArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    let dir = ctx.path(&a.embeddings);
    m.inputs.push(dir.clone());
    let dump = EmbeddingDump::<f32>::load(&dir)?;
    let params = TsneParams {
        perplexity: a.perplexity,
        iterations: a.iterations,
        seed: ctx.config.seed,
        ..TsneParams::default()
    };
    let points = tsne(dump.vectors.view(), &params)?;
    let out = ctx.path(&a.out);
    plot_points(points.view(), &dump.labels, &format!("t-SNE of [CLS] embeddings ({})", dump.model_version), &out)?;
    m.outputs.push(out.clone());
    let silhouette = separability_score(dump.vectors.view(), &dump.labels)?;
    print_json(&json!({ "plot": out, "silhouette": silhouette }))
}

fn predict(ctx: &Ctx, a: &PredictArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    let model = ctx.path(&a.model);
    m.inputs.push(model.clone());
    let detector = Detector::load(&model)?;
    let (source, language) = match a.file.as_deref() {
        Some(p) if p != Path::new("-") => {
            let p = ctx.path(p);
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            let lang = a.language.or_else(|| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(Language::from_extension)
                    .filter(|l| *l != Language::Other)
            });
            m.inputs.push(p);
            (text, lang)
        }
        _ => {
            let mut text = String::new();
            std::io::stdin().read_to_string(&mut text)?;
            (text, a.language)
        }
    };
    let result = detector.predict(&source, language, a.threshold)?;
    print_json(&serde_json::to_value(&result)?)
}

fn serve(ctx: &Ctx, a: &ServeArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    let mut config = ServiceConfig::new(a.bind);
    let mut models = BTreeMap::new();
    for spec in a.models.iter().filter(|s| !s.trim().is_empty()) {
        let (key, dir) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("--model expects key=checkpoint_dir, got {spec:?}"))?;
        let dir = ctx.path(Path::new(dir.trim()));
        m.inputs.push(dir.clone());
        models.insert(key.trim().to_string(), dir);
    }
    if models.is_empty() {
        bail!("serve needs at least one --model key=checkpoint_dir");
    }
    config.models = models;
    config.default_model = a.default_model.clone();
    config.workers = a.workers;
    config.queue = a.queue;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(codeorigin_service::serve(config))?;
    Ok(())
}

fn run_reproduce(ctx: &Ctx, a: &ReproduceArgs, m: &mut RunManifest) -> anyhow::Result<()> {
    if a.benchmark == DatasetKind::Augmentation {
        bail!("reproduce takes gptsniffer or whodunit");
    }
    let locator = a.dataset.clone().unwrap_or_else(|| a.benchmark.as_str().to_string());
    let set = ctx.dataset(&locator, Some(a.benchmark), m)?;
    let leaf = if a.smoke { "reproduce-smoke" } else { "reproduce" };
    let out = a.out.as_deref().map(|p| ctx.path(p)).unwrap_or_else(|| ctx.run_dir(a.benchmark, leaf));
    let mut opts = ReproduceOptions::new(ctx.config.clone());
    opts.smoke = a.smoke;
    opts.ablation = !a.no_ablation;
    opts.full_grid = a.full_grid;
    opts.baseline_weights = a.baseline_weights.as_deref().map(|p| ctx.path(p));
    opts.tsne.seed = ctx.config.seed;
    if let Some(p) = a.perplexity {
        opts.tsne.perplexity = p;
    }
    let bundle = reproduce(&set, &opts, &out)?;
    m.outputs.push(out);
    print!("{}", bundle.to_markdown());
    Ok(())
}

fn dispatch(cli: &Cli, ctx: &Ctx, m: &mut RunManifest) -> anyhow::Result<()> {
    match &cli.command {
        Command::Ingest(a) => ingest(ctx, a, m),
        Command::Preprocess(a) => preprocess(ctx, a, m),
        Command::TrainStage1(a) => train_stage1(ctx, a, m),
        Command::TrainStage2(a) => train_stage2(ctx, a, m),
        Command::Eval(a) => eval(ctx, a, m),
        Command::Ablate(a) => run_ablate(ctx, a, m),
        Command::ExportEmbeddings(a) => export(ctx, a, m),
        Command::Visualize(a) => visualize(ctx, a, m),
        Command::Predict(a) => predict(ctx, a, m),
        Command::Serve(a) => serve(ctx, a, m),
        Command::Reproduce(a) => run_reproduce(ctx, a, m),
    }
}

fn error_line(e: &anyhow::Error) -> String {
    let kind = e
        .downcast_ref::<codeorigin_core::Error>()
        .map(|e| e.kind())
        .unwrap_or("error");
    json!({ "error": kind, "message": format!("{e:#}") }).to_string()
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let (config, source) = load_config(cli)?;
    let workdir = cli.workdir.clone();
    let data_root = match &cli.data_root {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => workdir.join(p),
        None => workdir.join("data"),
    };
    let ctx = Ctx { workdir, data_root, config };
    let name = cli.command.name();
    let mut manifest = RunManifest::start(name, std::env::args().collect(), &ctx.workdir, &ctx.config, source);
    let path = ctx.workdir.join("manifests").join(manifest.file_name());
    manifest.write(&path)?;
    let result = dispatch(cli, &ctx, &mut manifest);
    manifest.finish(&result);
    if let Err(e) = manifest.write(&path) {
        log::error!("could not update manifest {}: {e:#}", path.display());
    }
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::from(1)
        }
    }
}
