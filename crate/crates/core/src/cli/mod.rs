//! Command-line interface: train, compress, eval, bench and inspect.

mod output;

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use lmcompress::bench::{compare, run_bench, BenchConfig};
use lmcompress::cells::{ArchConfig, CellKind, GruBlend};
use lmcompress::langmodel::{evaluate, train, word_accuracy, Corpus, LanguageModel, TrainConfig, TrainHistory, Vocabulary};
use lmcompress::lowrank::FactorInit;
use lmcompress::numkit::Rng;
use lmcompress::pipeline::{load_model, run_pipeline, save_model, CompressionSpec, ModelStats, PipelineReport, Step, StepOp};

pub use output::Format;

#[derive(Debug, Parser)]
#[command(name = "lmcompress", version, about = "Train, compress, evaluate and benchmark recurrent language models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Seed for initialization, training and benchmark inputs.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads for evaluation.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Also write the report as JSON to this file.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a dense model from scratch.
    Train(TrainArgs),
    /// Apply a compression spec to a saved model.
    Compress(CompressArgs),
    /// Perplexity and word accuracy on one split.
    Eval(EvalArgs),
    /// Time inference steps.
    Bench(BenchArgs),
    /// Parameter, size and MAC accounting of a model file or architecture.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
}

#[derive(Debug, Args)]
pub struct ArchArgs {
    #[arg(long, default_value = "lstm")]
    pub cell: CellKind,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 200)]
    pub hidden: usize,
    #[arg(long, value_enum, default_value_t = BlendArg::Recurrent)]
    pub gru_blend: BlendArg,
    #[arg(long, default_value_t = 0.1)]
    pub init_scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum BlendArg {
    Recurrent,
    Input,
}

impl ArchArgs {
    fn config(&self, vocab: usize) -> ArchConfig {
        let mut cfg = ArchConfig::new(self.cell, vocab, self.hidden, self.layers);
        cfg.gru_blend = match self.gru_blend {
            BlendArg::Recurrent => GruBlend::Recurrent,
            BlendArg::Input => GruBlend::Input,
        };
        cfg.init_scale = self.init_scale;
        cfg
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub arch: ArchArgs,
    /// Cap on the vocabulary size, specials included.
    #[arg(long)]
    pub max_vocab: Option<usize>,
    /// TOML training configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub adam_epochs: Option<usize>,
    #[arg(long)]
    pub sgd_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub unroll: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub max_batches: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Training history as JSON; defaults to `<out>.history.json`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus files, required when a step fine-tunes.
    #[arg(long, requires_all = ["valid", "test"])]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Token file to evaluate, encoded with the model's vocabulary.
    #[arg(long)]
    pub data: PathBuf,
    /// Contiguous segments evaluated in parallel.
    #[arg(long, default_value_t = 1)]
    pub segments: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Second model timed alternately with the first.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1)]
    pub seq_len: usize,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Model file; without it the architecture flags describe a fresh model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[arg(long, default_value_t = 10_000)]
    pub vocab: usize,
    /// Low-rank factor the recurrent layers with this rank.
    #[arg(long)]
    pub lr_cells: Option<usize>,
    /// Low-rank factor the embedding and output layers with this rank.
    #[arg(long)]
    pub lr_io: Option<usize>,
    /// Compression spec applied before accounting (no fine-tuning).
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

/// A problem with the invocation itself rather than with the work.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

/// 2 for usage and configuration errors, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<lmcompress::Error>() {
            return match err {
                lmcompress::Error::Config(_) | lmcompress::Error::Param(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn input(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("input file {} does not exist", path.display())));
    }
    Ok(())
}

fn output(path: &Path) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(usage(format!("output directory {} does not exist", parent.display())));
    }
    Ok(())
}

fn outputs(cli: &Cli) -> Result<()> {
    if let Some(r) = &cli.report {
        output(r)?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    outputs(&cli)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Train(a) => cmd_train(&cli, a),
        Command::Compress(a) => cmd_compress(&cli, a),
        Command::Eval(a) => cmd_eval(&cli, a),
        Command::Bench(a) => cmd_bench(&cli, a),
        Command::Inspect(a) => cmd_inspect(&cli, a),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: PathBuf,
    pub history: TrainHistory,
    pub test_perplexity: f64,
    pub stats: ModelStats,
}

fn train_config(a: &TrainArgs, seed: u64) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    cfg.seed = seed;
    if let Some(v) = a.adam_epochs {
        cfg.stage1.epochs = v;
    }
    if let Some(v) = a.sgd_epochs {
        cfg.stage2.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.unroll {
        cfg.unroll = v;
    }
    if let Some(v) = a.dropout {
        cfg.dropout = v;
    }
    if a.max_batches.is_some() {
        cfg.max_batches = a.max_batches;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    for p in [&a.corpus.train, &a.corpus.valid, &a.corpus.test] {
        input(p)?;
    }
    if let Some(c) = &a.config {
        input(c)?;
    }
    output(&a.out)?;
    let history_path = a.history.clone().unwrap_or_else(|| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(".history.json");
        PathBuf::from(s)
    });
    output(&history_path)?;
    let cfg = train_config(a, cli.seed)?;
    let corpus = Corpus::load(&a.corpus.train, &a.corpus.valid, &a.corpus.test, None, a.max_vocab)?;
    let arch = a.arch.config(corpus.vocab.len());
    let model = LanguageModel::dense(corpus.vocab.clone(), &arch, &mut Rng::new(cli.seed))?;
    let (trained, history) = train(&model, &corpus, &cfg).context("training failed")?;
    save_model(&trained, &a.out)?;
    std::fs::write(&history_path, serde_json::to_string_pretty(&history)? + "\n")
        .with_context(|| format!("writing {}", history_path.display()))?;
    let report = TrainReport {
        model: a.out.clone(),
        test_perplexity: evaluate(&trained.net, &corpus.test, cfg.eval_segments)?.perplexity,
        stats: ModelStats::of(&trained),
        history,
    };
    output::emit(&report, cli.format, cli.report.as_deref())
}

fn cmd_compress(cli: &Cli, a: &CompressArgs) -> Result<()> {
    input(&a.model)?;
    input(&a.spec)?;
    let corpus_paths = [&a.train, &a.valid, &a.test];
    for p in corpus_paths.iter().copied().flatten() {
        input(p)?;
    }
    output(&a.out)?;
    let spec = CompressionSpec::load(&a.spec)?;
    let model = load_model(&a.model)?;
    let corpus = match (&a.train, &a.valid, &a.test) {
        (Some(t), Some(v), Some(s)) => Some(Corpus::load(t, v, s, Some(model.vocab.clone()), None)?),
        _ => None,
    };
    let out = run_pipeline(&model, &spec, corpus.as_ref())?;
    save_model(&out.model, &a.out)?;
    output::emit(&out.report, cli.format, cli.report.as_deref())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub tokens: usize,
    pub cross_entropy: f64,
    pub perplexity: f64,
    pub accuracy: f64,
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    input(&a.model)?;
    input(&a.data)?;
    if a.segments == 0 {
        return Err(usage("--segments must be positive"));
    }
    let model = load_model(&a.model)?;
    let text = std::fs::read_to_string(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let stream = model.vocab.encode(&text);
    let r = evaluate(&model.net, &stream, a.segments)?;
    let report = EvalReport {
        tokens: r.tokens,
        cross_entropy: r.cross_entropy,
        perplexity: r.perplexity,
        accuracy: word_accuracy(r.perplexity),
    };
    output::emit(&report, cli.format, cli.report.as_deref())
}

fn cmd_bench(cli: &Cli, a: &BenchArgs) -> Result<()> {
    input(&a.model)?;
    if let Some(p) = &a.compare {
        input(p)?;
    }
    if a.iters == 0 || a.seq_len == 0 {
        return Err(usage("--iters and --seq-len must be positive"));
    }
    let cfg = BenchConfig {
        warmup: a.warmup,
        iters: a.iters,
        seq_len: a.seq_len,
        seed: cli.seed,
    };
    let model = load_model(&a.model)?;
    match &a.compare {
        Some(p) => {
            let other = load_model(p)?;
            output::emit(&compare(&model, &other, &cfg)?, cli.format, cli.report.as_deref())
        }
        None => output::emit(&run_bench(&model, &cfg)?, cli.format, cli.report.as_deref()),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InspectReport {
    pub model_id: String,
    pub stats: ModelStats,
    /// Matrix parameters in millions.
    pub matrix_params_m: f64,
    /// Stored size in units of 10⁶ bytes.
    pub size_mb: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineReport>,
}

fn synthetic_vocab(n: usize) -> Result<Vocabulary> {
    if n < 3 {
        return Err(usage("--vocab must be at least 3"));
    }
    let mut tokens = vec![lmcompress::langmodel::UNK.to_string(), lmcompress::langmodel::EOS.to_string()];
    tokens.extend((2..n).map(|i| format!("w{i}")));
    Ok(Vocabulary::from_tokens(tokens)?)
}

fn cmd_inspect(cli: &Cli, a: &InspectArgs) -> Result<()> {
    if let Some(p) = &a.model {
        input(p)?;
    }
    if let Some(p) = &a.spec {
        input(p)?;
    }
    let mut spec = match &a.spec {
        Some(p) => CompressionSpec::load(p)?,
        None => CompressionSpec::default(),
    };
    if spec.steps.iter().any(|s| s.finetune.is_some()) {
        bail!(usage("inspect does not fine-tune; remove finetune tables from the spec"));
    }
    let mut pre = Vec::new();
    let init = FactorInit::Random { scale: 0.0 };
    if let Some(rank) = a.lr_cells {
        pre.push(Step { op: StepOp::LrCells { rank, init }, finetune: None });
    }
    if let Some(rank) = a.lr_io {
        pre.push(Step { op: StepOp::LrIo { rank, init }, finetune: None });
    }
    pre.append(&mut spec.steps);
    spec.steps = pre;
    spec.seed = cli.seed;
    let model = match &a.model {
        Some(p) => load_model(p)?,
        None => {
            let vocab = synthetic_vocab(a.vocab)?;
            let mut arch = a.arch.config(a.vocab);
            arch.init_scale = 0.0;
            LanguageModel::dense(vocab, &arch, &mut Rng::new(cli.seed))?
        }
    };
    let (model, pipeline) = if spec.steps.is_empty() {
        (model, None)
    } else {
        spec.validate()?;
        let out = run_pipeline(&model, &spec, None)?;
        (out.model, Some(out.report))
    };
    let stats = ModelStats::of(&model);
    let report = InspectReport {
        model_id: lmcompress::bench::model_id(&model.net),
        matrix_params_m: stats.matrix_params as f64 / 1e6,
        size_mb: stats.size_mb(),
        stats,
        pipeline,
    };
    output::emit(&report, cli.format, cli.report.as_deref())
}
