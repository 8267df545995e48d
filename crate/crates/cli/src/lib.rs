//! The `kore` command line: capture, init-adapter, train, cosvd, augment, eval.

pub mod config;
pub mod llm;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use kore_core::adapter::{attach_kore_adapters, KoreConfig, LayerTheoremReport, DEFAULT_NULL_EPS, DEFAULT_THEOREM_TOL};
use kore_core::augment::{
    augment_tasks, emit_dataset, read_knowledge, write_knowledge, DeterministicStub, GenClient, StubDirClient, Task,
};
use kore_core::cosvd::{heatmap, retention_report, write_heatmap_csv, RetentionConfig, HEATMAP_GRID};
use kore_core::covariance::{capture_labeled, load_dir, LabeledBatch};
use kore_core::eval::{evaluate, f1, join_by_id, read_text_records, Normalization};
use kore_core::fixtures::{demo_fixture, DEMO_RANK};
use kore_core::model::{load_checkpoint, save_checkpoint};
use kore_core::trainer::{read_examples, train, write_examples};
use kore_core::{Example, Loss, Matrix, Method};
use serde::Serialize;

use config::{load_any, RunConfig};

/// Tokens absorbed per capture batch.
const CAPTURE_BATCH: usize = 64;

#[derive(Parser, Debug)]
#[command(name = "kore", version, about = "Null-space constrained adapters for small dense networks")]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run configuration JSON; flags override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Accumulate per-layer input covariances over a dataset.
    Capture(CaptureArgs),
    /// Attach constrained adapters and verify their guarantees.
    InitAdapter(InitArgs),
    /// Train the checkpoint's trainable parameters.
    Train(TrainArgs),
    /// Compare truncated decompositions and export covariance heatmaps.
    Cosvd(CosvdArgs),
    /// Build instruction samples from knowledge items.
    Augment(AugmentArgs),
    /// Score predictions with cover exact match and token F1.
    Eval(EvalArgs),
    /// Write the bundled demo fixture.
    Demo(DemoArgs),
}

#[derive(Args, Debug)]
pub struct CaptureArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Examples JSONL; only `input` is read.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InitArgs {
    #[arg(long)]
    pub cov_dir: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_THEOREM_TOL)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CosvdArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub cov_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8])]
    pub k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [Method::Plain, Method::Asvd, Method::Cosvd])]
    pub methods: Vec<Method>,
    /// Evaluation set as `name=FILE`; repeatable. The first is the reference set.
    #[arg(long = "eval", value_name = "NAME=FILE", required = true)]
    pub eval: Vec<String>,
    #[arg(long, default_value = "mse")]
    pub loss: String,
    #[arg(long, default_value_t = kore_core::cosvd::DEFAULT_ASVD_ALPHA)]
    pub alpha: f64,
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Report path; heatmaps go next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    pub knowledge: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Canned responses keyed by request hash.
    #[arg(long)]
    pub stub_dir: Option<PathBuf>,
    /// Chat-completion API root; the key is read from KORE_LLM_API_KEY.
    #[arg(long)]
    pub llm_url: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub tasks: Option<Vec<Task>>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Compare tokens literally, without case folding or punctuation trimming.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` and runs it, returning the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn required(flag: Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> anyhow::Result<PathBuf> {
    flag.or_else(|| from_config.clone())
        .with_context(|| format!("--{name} is required (flag or config paths.{})", name.replace('-', "_")))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => load_any(p)?,
        None => RunConfig::with_seed(0),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    match cli.command {
        Command::Capture(a) => cmd_capture(cfg, a),
        Command::InitAdapter(a) => cmd_init(cfg, a),
        Command::Train(a) => cmd_train(cfg, a),
        Command::Cosvd(a) => cmd_cosvd(cfg, a),
        Command::Augment(a) => cmd_augment(cfg, a),
        Command::Eval(a) => cmd_eval(cfg, a),
        Command::Demo(a) => cmd_demo(cfg, a),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn input_batches(data: &[Example]) -> anyhow::Result<Vec<LabeledBatch>> {
    let mut by_cat: BTreeMap<String, Vec<&Example>> = BTreeMap::new();
    for ex in data {
        by_cat.entry(ex.category.clone().unwrap_or_default()).or_default().push(ex);
    }
    let mut out = Vec::new();
    for (category, exs) in by_cat {
        for chunk in exs.chunks(CAPTURE_BATCH) {
            let cols: Vec<&[f64]> = chunk.iter().map(|e| e.input.as_slice()).collect();
            out.push(LabeledBatch { category: category.clone(), x: Matrix::from_columns(&cols)? });
        }
    }
    Ok(out)
}

fn cmd_capture(mut cfg: RunConfig, a: CaptureArgs) -> anyhow::Result<()> {
    let ckpt = required(a.checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let data = required(a.data, &cfg.paths.data, "data")?;
    let out = required(a.out, &cfg.paths.out, "out")?;
    let model = load_checkpoint(&ckpt)?;
    let examples = read_examples(&data)?;
    let covs = capture_labeled(&model, &input_batches(&examples)?)?;
    for acc in covs.values() {
        acc.save(&out)?;
        log::info!("{}: {} tokens", acc.layer_id(), acc.tokens());
    }
    cfg.paths = config::Paths { checkpoint: Some(ckpt), data: Some(data), cov_dir: None, out: Some(out.clone()) };
    cfg.write_into(&out)
}

#[derive(Serialize)]
struct TheoremsFile<'a> {
    pass: bool,
    rank: usize,
    eps: f64,
    layers: &'a [LayerTheoremReport],
}

fn cmd_init(mut cfg: RunConfig, a: InitArgs) -> anyhow::Result<()> {
    let cov_dir = required(a.cov_dir, &cfg.paths.cov_dir, "cov-dir")?;
    let ckpt = required(a.checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let out = required(a.out, &cfg.paths.out, "out")?;
    let rank = a.rank.or(cfg.rank).context("--rank is required (flag or config rank)")?;
    let eps = a.eps.or(cfg.eps).unwrap_or(DEFAULT_NULL_EPS);
    let model = load_checkpoint(&ckpt)?;
    let covs = load_dir(&cov_dir)?;
    let kcfg = KoreConfig { eps, tolerance: a.tolerance, ..KoreConfig::new(rank) };
    let (adapted, reports) = attach_kore_adapters(&model, &covs, &kcfg)?;
    save_checkpoint(&adapted, &out)?;
    let pass = reports.iter().all(|r| r.theorems.pass);
    write_json(&out.join("theorems.json"), &TheoremsFile { pass, rank, eps, layers: &reports })?;
    if !pass {
        log::warn!("theorem checks are advisory or failing for some layers; see theorems.json");
    }
    cfg.rank = Some(rank);
    cfg.eps = Some(eps);
    cfg.paths = config::Paths { checkpoint: Some(ckpt), cov_dir: Some(cov_dir), data: None, out: Some(out.clone()) };
    cfg.write_into(&out)
}

fn cmd_train(mut cfg: RunConfig, a: TrainArgs) -> anyhow::Result<()> {
    let ckpt = required(a.checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let data = required(a.data, &cfg.paths.data, "data")?;
    let out = required(a.out, &cfg.paths.out, "out")?;
    if let Some(lr) = a.lr {
        cfg.train.base_lr = lr;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    let mut model = load_checkpoint(&ckpt)?;
    let examples = read_examples(&data)?;
    let history = train(&mut model, &examples, &cfg.train)?;
    save_checkpoint(&model, &out)?;
    history.write_jsonl(&out.join("history.jsonl"))?;
    if let Some(l) = history.final_loss() {
        log::info!("final loss {l:e} after {} steps", history.records.len());
    }
    cfg.paths = config::Paths { checkpoint: Some(ckpt), data: Some(data), cov_dir: None, out: Some(out.clone()) };
    cfg.write_into(&out)
}

fn parse_loss(s: &str) -> anyhow::Result<Loss> {
    Ok(serde_json::from_value(serde_json::Value::String(s.to_string()))
        .with_context(|| format!("unknown loss {s:?} (mse or softmax_xent)"))?)
}

fn cmd_cosvd(mut cfg: RunConfig, a: CosvdArgs) -> anyhow::Result<()> {
    let ckpt = required(a.checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let cov_dir = required(a.cov_dir, &cfg.paths.cov_dir, "cov-dir")?;
    let model = load_checkpoint(&ckpt)?;
    let covs = load_dir(&cov_dir)?;
    let mut sets = BTreeMap::new();
    let mut reference = None;
    for arg in &a.eval {
        let (name, file) = arg.split_once('=').with_context(|| format!("--eval expects NAME=FILE, got {arg:?}"))?;
        reference.get_or_insert_with(|| name.to_string());
        sets.insert(name.to_string(), read_examples(Path::new(file))?);
    }
    let rcfg = RetentionConfig {
        methods: a.methods,
        ks: a.k,
        loss: parse_loss(&a.loss)?,
        asvd_alpha: a.alpha,
        ridge: a.ridge,
        reference_set: reference.expect("clap requires one --eval"),
    };
    let report = retention_report(&model, &covs, &sets, &rcfg)?;
    let dir = parent_dir(&a.out);
    fs::create_dir_all(&dir)?;
    write_json(&a.out, &report)?;
    for acc in covs.values() {
        write_heatmap_csv(&dir.join(format!("{}.heat.csv", acc.layer_id())), &heatmap(acc.matrix(), HEATMAP_GRID))?;
    }
    cfg.paths = config::Paths { checkpoint: Some(ckpt), cov_dir: Some(cov_dir), data: None, out: Some(a.out) };
    cfg.write_into(&dir)
}

fn make_client(cfg: &RunConfig) -> Box<dyn GenClient> {
    let aug = &cfg.augment;
    let stub = DeterministicStub { quadruplets: aug.quadruplets };
    if let Some(url) = &aug.llm_url {
        return Box::new(llm::HttpClient::from_env(url, aug.llm_model.clone()));
    }
    match (&aug.stub_dir, aug.stub_fallback) {
        (Some(dir), true) => Box::new(StubDirClient::with_fallback(dir.clone(), stub)),
        (Some(dir), false) => Box::new(StubDirClient::new(dir.clone())),
        (None, _) => Box::new(stub),
    }
}

#[derive(Serialize)]
struct AugmentSummary<'a> {
    samples: usize,
    by_task: BTreeMap<&'static str, usize>,
    skipped: &'a [kore_core::augment::SkipRecord],
    warnings: &'a [String],
}

fn cmd_augment(mut cfg: RunConfig, a: AugmentArgs) -> anyhow::Result<()> {
    let out = required(a.out, &cfg.paths.out, "out")?;
    if a.stub_dir.is_some() {
        cfg.augment.stub_dir = a.stub_dir;
    }
    if a.llm_url.is_some() {
        cfg.augment.llm_url = a.llm_url;
    }
    if let Some(t) = a.tasks {
        cfg.augment.tasks = t;
    }
    cfg.validate()?;
    let items = read_knowledge(&a.knowledge)?;
    let client = make_client(&cfg);
    let result = augment_tasks(&items, client.as_ref(), cfg.seed, &cfg.augment.tasks)?;
    fs::create_dir_all(&out)?;
    let n = emit_dataset(&result.samples, &out.join("dataset.jsonl"))?;
    let by_task = result.task_counts().into_iter().map(|(t, c)| (t.as_str(), c)).collect();
    write_json(
        &out.join("augment_report.json"),
        &AugmentSummary { samples: n, by_task, skipped: &result.skipped, warnings: &result.warnings },
    )?;
    cfg.paths.data = Some(a.knowledge);
    cfg.paths.out = Some(out.clone());
    cfg.write_into(&out)
}

#[derive(Serialize)]
struct PairMetrics<'a> {
    id: &'a str,
    #[serde(flatten)]
    metrics: kore_core::MetricResult,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    normalization: Normalization,
    #[serde(flatten)]
    aggregate: kore_core::eval::Aggregate,
    items: Vec<PairMetrics<'a>>,
}

fn cmd_eval(mut cfg: RunConfig, a: EvalArgs) -> anyhow::Result<()> {
    let norm = if a.raw { Normalization::Raw } else { Normalization::Standard };
    let pred = read_text_records(&a.pred)?;
    let gold = read_text_records(&a.gold)?;
    let pairs = join_by_id(&pred, &gold)?;
    let aggregate = evaluate(&pairs, norm)?;
    let items = gold
        .keys()
        .zip(&pairs)
        .map(|(id, (p, g))| Ok(PairMetrics { id, metrics: f1(p, g, norm)? }))
        .collect::<kore_core::Result<Vec<_>>>()?;
    let dir = parent_dir(&a.out);
    fs::create_dir_all(&dir)?;
    write_json(&a.out, &MetricsFile { normalization: norm, aggregate, items })?;
    cfg.paths.out = Some(a.out);
    cfg.write_into(&dir)
}

const DEMO_GOLD: [(&str, &str); 4] = [
    ("q1", "Thomas Matthew Crooks"),
    ("q2", "Paris"),
    ("q3", "new york"),
    ("q4", "Oppenheimer"),
];
const DEMO_PRED: [(&str, &str); 4] = [
    ("q1", "The shooter was Thomas Matthew Crooks."),
    ("q2", "London"),
    ("q3", "new york city"),
    ("q4", "It was Oppenheimer."),
];

fn write_text_records(path: &Path, rows: &[(&str, &str)]) -> anyhow::Result<()> {
    let mut s = String::new();
    for (id, text) in rows {
        s.push_str(&serde_json::to_string(&kore_core::eval::TextRecord { id: id.to_string(), text: text.to_string() })?);
        s.push('\n');
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn cmd_demo(mut cfg: RunConfig, a: DemoArgs) -> anyhow::Result<()> {
    let out = a.out;
    let fx = demo_fixture(cfg.seed);
    fs::create_dir_all(&out)?;
    save_checkpoint(&fx.model, &out.join("checkpoint"))?;
    write_examples(&out.join("capture.jsonl"), &fx.capture)?;
    write_examples(&out.join("train.jsonl"), &fx.train)?;
    write_examples(&out.join("eval_old.jsonl"), &fx.eval_old)?;
    write_examples(&out.join("eval_new.jsonl"), &fx.eval_new)?;
    write_knowledge(&out.join("knowledge.jsonl"), &kore_core::augment::demo_corpus(20, cfg.seed))?;
    write_text_records(&out.join("gold.jsonl"), &DEMO_GOLD)?;
    write_text_records(&out.join("pred.jsonl"), &DEMO_PRED)?;
    cfg.rank = Some(DEMO_RANK);
    cfg.train.base_lr = 0.05;
    cfg.train.epochs = 50;
    cfg.paths.out = Some(out.clone());
    write_json(&out.join("train_config.json"), &cfg.train)?;
    cfg.write_into(&out)
}
