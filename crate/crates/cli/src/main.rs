//! `utos` — command-line driver for the unfair-ToS classification
//! pipeline: synthesize or split corpora, train encoder variants, pool
//! sentence embeddings, grid-search an SVC, evaluate per-category tags,
//! and aggregate experiment reports into tables.
//!
//! Every command writes a `<output>.manifest.json` sidecar recording the
//! invocation; `utos rerun --manifest <file>` replays it and reproduces
//! the primary outputs byte for byte.

mod commands;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use utos_core::GammaSpec;

#[derive(Parser)]
#[command(name = "utos", version, about, max_term_width = 100)]
struct Cli {
    /// Worker threads for parallel stages (0 = one per core). Outputs do
    /// not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Log progress details (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic ToS corpus with a planted signal.
    Synth(SynthArgs),
    /// Split a corpus into train and test portions.
    Split(SplitArgs),
    /// Initialize an encoder over a corpus vocabulary and save it.
    Encode(EncodeArgs),
    /// Masked-language-model pretraining (--steps 0 = untrained baseline).
    Pretrain(PretrainArgs),
    /// Supervised fine-tuning on unfair-binary labels; the temporary
    /// classification head is discarded afterwards.
    Finetune(FinetuneArgs),
    /// Pool per-layer hidden states into sentence embedding files.
    Pool(PoolArgs),
    /// Cross-validated grid search over SVC pipelines, then a test-set
    /// evaluation of the winner.
    Grid(GridArgs),
    /// Per-category evaluation restricted to unfair sentences.
    EvalTags(EvalTagsArgs),
    /// Aggregate experiment reports into summary tables.
    Report(ReportArgs),
    /// Replay a recorded invocation from its run manifest.
    Rerun(RerunArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Split(_) => "split",
            Command::Encode(_) => "encode",
            Command::Pretrain(_) => "pretrain",
            Command::Finetune(_) => "finetune",
            Command::Pool(_) => "pool",
            Command::Grid(_) => "grid",
            Command::EvalTags(_) => "eval-tags",
            Command::Report(_) => "report",
            Command::Rerun(_) => "rerun",
        }
    }

    /// Force-overwrite every output; used when replaying a manifest.
    fn force_outputs(&mut self) {
        match self {
            Command::Synth(a) => a.force = true,
            Command::Split(a) => a.force = true,
            Command::Encode(a) => a.force = true,
            Command::Pretrain(a) => a.force = true,
            Command::Finetune(a) => a.force = true,
            Command::Pool(a) => a.force = true,
            Command::Grid(a) => a.force = true,
            Command::EvalTags(a) => a.force = true,
            Command::Report(a) => a.force = true,
            Command::Rerun(_) => {}
        }
    }
}

/// Corpus serialization format; inferred from the file extension when the
/// flag is omitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FormatChoice {
    Jsonl,
    Csv,
}

/// Which pipelines to try: with the feature scaler, without, or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ScalerChoice {
    On,
    Off,
    Both,
}

/// Encoder training methodology, used to label experiment reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Methodology {
    Baseline,
    Pretrained,
    FinetuneBase,
    PretrainedFinetuned,
}

impl Methodology {
    fn label(self) -> &'static str {
        match self {
            Methodology::Baseline => "baseline",
            Methodology::Pretrained => "pretrained",
            Methodology::FinetuneBase => "finetune-base",
            Methodology::PretrainedFinetuned => "pretrained-finetuned",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum TableKind {
    Rq1,
    Rq2,
    Binary,
}

/// Encoder shape flags, shared by `encode` and — for the convenience of
/// starting from scratch — `pretrain` and `finetune` when no --model is
/// given.
#[derive(Debug, Args, Serialize)]
struct EncoderShapeArgs {
    /// Transformer layers.
    #[arg(long, default_value_t = 4)]
    layers: usize,
    /// Hidden width (must be divisible by --heads).
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    /// Attention heads.
    #[arg(long, default_value_t = 4)]
    heads: usize,
    /// Feed-forward inner width.
    #[arg(long, default_value_t = 64)]
    ffn: usize,
    /// Maximum tokens per sentence (including CLS and SEP).
    #[arg(long, default_value_t = 64)]
    max_tokens: usize,
    /// Vocabulary cap: keep at most this many distinct words.
    #[arg(long, default_value_t = 4096)]
    vocab_max: usize,
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    /// Number of sentences.
    #[arg(long)]
    n: usize,
    /// Fraction of unfair sentences, in (0,1).
    #[arg(long, default_value_t = 0.121)]
    positive_rate: f64,
    /// Synthetic vocabulary size (≥ 9; indices 0..8 are marker words).
    #[arg(long, default_value_t = 48)]
    vocab_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output corpus file.
    #[arg(long)]
    out: PathBuf,
    /// Corpus format; default follows the file extension.
    #[arg(long, value_enum)]
    format: Option<FormatChoice>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args, Serialize)]
struct SplitArgs {
    /// Input corpus file.
    #[arg(long)]
    input: PathBuf,
    /// Fraction of sentences held out for the test set.
    #[arg(long, default_value_t = 0.15)]
    test_fraction: f64,
    /// Stratification: `ub`, `none`, or a category key such as `ter`.
    #[arg(long, default_value = "ub")]
    stratify: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file for the training portion.
    #[arg(long)]
    out_train: PathBuf,
    /// Output file for the test portion.
    #[arg(long)]
    out_test: PathBuf,
    /// Corpus format; default follows each file's extension.
    #[arg(long, value_enum)]
    format: Option<FormatChoice>,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args, Serialize)]
struct EncodeArgs {
    /// Corpus whose vocabulary the encoder is built over.
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    shape: EncoderShapeArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model checkpoint (.utos).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args, Serialize)]
struct PretrainArgs {
    /// Encoder checkpoint to start from; omitted = initialize a fresh
    /// encoder from --corpus using the shape flags.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Training corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// SGD steps; 0 saves the input model unchanged (baseline).
    #[arg(long)]
    steps: usize,
    /// Probability of masking each eligible token.
    #[arg(long, default_value_t = 0.15)]
    mask_rate: f64,
    /// Learning rate.
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[command(flatten)]
    shape: EncoderShapeArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model checkpoint.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args, Serialize)]
struct FinetuneArgs {
    /// Encoder checkpoint to start from; omitted = initialize a fresh
    /// encoder from --corpus using the shape flags.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Labeled training corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// Classification head, e.g. "dr(0.1)+Dense(16)".
    #[arg(long)]
    head: String,
    /// Training epochs.
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    /// Sentences per gradient step.
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[command(flatten)]
    shape: EncoderShapeArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model checkpoint.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args, Serialize)]
struct PoolArgs {
    /// Encoder checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Corpus to embed.
    #[arg(long)]
    corpus: PathBuf,
    /// Pooling mode 1..8, or `all` for every mode.
    #[arg(long)]
    mode: String,
    /// Directory receiving `<prefix>-mode<N>.tsv` files.
    #[arg(long)]
    out_dir: PathBuf,
    /// Output file prefix; defaults to the corpus file stem.
    #[arg(long)]
    prefix: Option<String>,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args, Serialize)]
struct GridArgs {
    /// Training embeddings (written by `pool`).
    #[arg(long)]
    train_embeddings: PathBuf,
    /// Training corpus supplying the labels.
    #[arg(long)]
    train_corpus: PathBuf,
    /// Held-out test embeddings; enables test metrics in the report.
    #[arg(long, requires = "test_corpus")]
    test_embeddings: Option<PathBuf>,
    /// Held-out test corpus.
    #[arg(long, requires = "test_embeddings")]
    test_corpus: Option<PathBuf>,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Comma-separated SVC C values.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0, 10.0, 100.0])]
    c_grid: Vec<f64>,
    /// Comma-separated RBF gamma values (numbers, `auto`, or `scale`).
    #[arg(long, value_delimiter = ',',
          default_values_t = [GammaSpec::Value(0.001), GammaSpec::Value(0.01), GammaSpec::Value(0.1), GammaSpec::Auto])]
    gamma_grid: Vec<GammaSpec>,
    /// Try pipelines with the scaler on, off, or both.
    #[arg(long, value_enum, default_value_t = ScalerChoice::Both)]
    scaler: ScalerChoice,
    /// Disable SMOTE oversampling of the minority class.
    #[arg(long)]
    no_smote: bool,
    /// SMOTE neighbor count.
    #[arg(long, default_value_t = 5)]
    smote_k: usize,
    /// Model-selection score: macro_f1 or micro_f1.
    #[arg(long, default_value = "macro_f1")]
    scoring: String,
    /// Methodology label recorded in the report.
    #[arg(long, value_enum)]
    methodology: Methodology,
    /// Model label recorded in the report (e.g. an encoder name).
    #[arg(long, default_value = "custom")]
    model_label: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output report (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-config table to this file.
    #[arg(long)]
    table_out: Option<PathBuf>,
    /// Table format for --table-out: fixed-width text unless `csv`.
    #[arg(long, value_enum)]
    format: Option<FormatChoice>,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args, Serialize)]
struct EvalTagsArgs {
    /// Training embeddings (pooled from the full training corpus).
    #[arg(long)]
    train_embeddings: PathBuf,
    /// Training corpus supplying the category tags.
    #[arg(long)]
    train_corpus: PathBuf,
    /// Test embeddings.
    #[arg(long)]
    test_embeddings: PathBuf,
    /// Test corpus.
    #[arg(long)]
    test_corpus: PathBuf,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Comma-separated SVC C values.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0, 10.0, 100.0])]
    c_grid: Vec<f64>,
    /// Comma-separated RBF gamma values (numbers, `auto`, or `scale`).
    #[arg(long, value_delimiter = ',',
          default_values_t = [GammaSpec::Value(0.001), GammaSpec::Value(0.01), GammaSpec::Value(0.1), GammaSpec::Auto])]
    gamma_grid: Vec<GammaSpec>,
    /// Try pipelines with the scaler on, off, or both.
    #[arg(long, value_enum, default_value_t = ScalerChoice::Both)]
    scaler: ScalerChoice,
    /// Disable SMOTE oversampling.
    #[arg(long)]
    no_smote: bool,
    /// SMOTE neighbor count.
    #[arg(long, default_value_t = 5)]
    smote_k: usize,
    /// Model-selection score: macro_f1 or micro_f1.
    #[arg(long, default_value = "macro_f1")]
    scoring: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output per-category results (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Also write the category table to this file.
    #[arg(long)]
    table_out: Option<PathBuf>,
    /// Table format for --table-out: fixed-width text unless `csv`.
    #[arg(long, value_enum)]
    format: Option<FormatChoice>,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    /// Report files or directories containing `*.json` reports.
    #[arg(long, required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Which table to render: rq1 (per-model), rq2 (per-mode), or binary.
    #[arg(long, value_enum)]
    table: TableKind,
    /// Aggregate with `mean` or `max` (rq1/rq2 tables).
    #[arg(long, default_value = "mean")]
    stat: String,
    /// Override the row grouping: model, methodology, or mode.
    #[arg(long)]
    group_by: Option<String>,
    /// Output table file.
    #[arg(long)]
    out: PathBuf,
    /// Table format: fixed-width text unless `csv`.
    #[arg(long, value_enum)]
    format: Option<FormatChoice>,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args, Serialize)]
struct RerunArgs {
    /// Manifest written by a previous command.
    #[arg(long)]
    manifest: PathBuf,
}

fn main() {
    let cli = Cli::parse();

    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::from_env(env_logger::Env::default())
        .filter_level(level)
        .format_timestamp(None)
        .init();

    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }

    let argv: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = commands::dispatch(cli.command, cli.jobs, argv) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
