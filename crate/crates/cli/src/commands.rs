//! Implementations of the `utos` subcommands. Each command derives its
//! working seed from the user's `--seed` with a stage label (documented in
//! the README), records inputs and outputs in a [`RunManifest`], and
//! refuses to overwrite existing outputs unless `--force` is given.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use clap::Parser;

use utos_core::{
    aggregate_reports, attach_test_metrics, derive_seed, grid_search, init_encoder,
    load_checkpoint, load_external_embeddings, parse_head_spec, pool_corpus, pretrain_mlm_traced,
    render_binary_table, save_checkpoint, synthesize_corpus, train_test_split, write_embeddings,
    Category, Corpus, CorpusFormat, EncoderConfig, EncoderModel, ExperimentReport, FineTuneConfig,
    GridSpec, GroupBy, MetricSet, PooledVector, PoolingMode, Provenance, Scoring, SmoteConfig,
    SplitSpec, Stat, StratifyOn, Vocabulary,
};

use crate::manifest::{read_manifest, RunManifest};
use crate::{
    Cli, Command, EncodeArgs, EncoderShapeArgs, EvalTagsArgs, FinetuneArgs, FormatChoice,
    GridArgs, PoolArgs, PretrainArgs, ReportArgs, RerunArgs, ScalerChoice, SplitArgs, SynthArgs,
};

/// Run one subcommand. `argv` is the command line recorded in the run
/// manifest; on a rerun it is the *original* argv from the manifest, so a
/// faithful replay rewrites an identical manifest.
pub fn dispatch(command: Command, jobs: usize, argv: Vec<String>) -> Result<()> {
    if let Command::Rerun(args) = command {
        return cmd_rerun(args, jobs);
    }
    let resolved = resolved_flags(&command)?;
    let manifest = RunManifest::new(command.name(), &argv, resolved, jobs);
    run(command, manifest)
}

fn run(command: Command, manifest: RunManifest) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a, manifest),
        Command::Split(a) => cmd_split(a, manifest),
        Command::Encode(a) => cmd_encode(a, manifest),
        Command::Pretrain(a) => cmd_pretrain(a, manifest),
        Command::Finetune(a) => cmd_finetune(a, manifest),
        Command::Pool(a) => cmd_pool(a, manifest),
        Command::Grid(a) => cmd_grid(a, manifest),
        Command::EvalTags(a) => cmd_eval_tags(a, manifest),
        Command::Report(a) => cmd_report(a, manifest),
        Command::Rerun(_) => unreachable!("handled above"),
    }
}

fn resolved_flags(command: &Command) -> Result<serde_json::Value> {
    let value = match command {
        Command::Synth(a) => serde_json::to_value(a),
        Command::Split(a) => serde_json::to_value(a),
        Command::Encode(a) => serde_json::to_value(a),
        Command::Pretrain(a) => serde_json::to_value(a),
        Command::Finetune(a) => serde_json::to_value(a),
        Command::Pool(a) => serde_json::to_value(a),
        Command::Grid(a) => serde_json::to_value(a),
        Command::EvalTags(a) => serde_json::to_value(a),
        Command::Report(a) => serde_json::to_value(a),
        Command::Rerun(a) => serde_json::to_value(a),
    };
    value.context("serializing resolved flags")
}

// ---------------------------------------------------------------- helpers

/// Refuse to clobber an existing output unless --force; make sure the
/// parent directory exists.
fn ensure_writable(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!(
            "{} already exists; pass --force to overwrite",
            path.display()
        );
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating directory {}", parent.display()))?;
        }
    }
    Ok(())
}

fn corpus_format(path: &Path, choice: Option<FormatChoice>) -> CorpusFormat {
    match choice {
        Some(FormatChoice::Jsonl) => CorpusFormat::Jsonl,
        Some(FormatChoice::Csv) => CorpusFormat::Csv,
        None => CorpusFormat::from_path(path),
    }
}

fn load_corpus(path: &Path, choice: Option<FormatChoice>) -> Result<Corpus> {
    Corpus::load(path, corpus_format(path, choice))
        .with_context(|| format!("loading corpus {}", path.display()))
}

fn parse_stratify(key: &str) -> Result<StratifyOn> {
    match key {
        "ub" => Ok(StratifyOn::UnfairBinary),
        "none" => Ok(StratifyOn::None),
        other => Category::from_key(other)
            .map(StratifyOn::Category)
            .ok_or_else(|| {
                anyhow!(
                    "unknown stratify key `{other}` (expected ub, none, or a \
                     category key: ltd, ter, ch, cr, use, law, j, a)"
                )
            }),
    }
}

fn parse_modes(text: &str) -> Result<Vec<PoolingMode>> {
    if text.eq_ignore_ascii_case("all") {
        Ok(PoolingMode::ALL.to_vec())
    } else {
        let mode: PoolingMode = text.parse()?;
        Ok(vec![mode])
    }
}

fn scaler_options(choice: ScalerChoice) -> Vec<bool> {
    match choice {
        ScalerChoice::On => vec![true],
        ScalerChoice::Off => vec![false],
        ScalerChoice::Both => vec![false, true],
    }
}

/// Load a model checkpoint, or initialize a fresh encoder over the corpus
/// vocabulary when no checkpoint was given.
fn load_or_init_model(
    model_path: Option<&Path>,
    corpus: &Corpus,
    shape: &EncoderShapeArgs,
    seed: u64,
    manifest: &mut RunManifest,
) -> Result<EncoderModel> {
    match model_path {
        Some(path) => {
            manifest.add_input(path)?;
            let (model, svc) = load_checkpoint(path)?;
            if svc.is_some() {
                log::info!("{} carries a classifier section; ignored here", path.display());
            }
            Ok(model)
        }
        None => fresh_encoder(corpus, shape, seed),
    }
}

fn fresh_encoder(corpus: &Corpus, shape: &EncoderShapeArgs, seed: u64) -> Result<EncoderModel> {
    let vocab = Vocabulary::build(
        corpus.sentences().iter().map(|s| s.text.as_str()),
        shape.vocab_max,
    );
    let config = EncoderConfig {
        num_layers: shape.layers,
        hidden_dim: shape.hidden,
        num_heads: shape.heads,
        ffn_dim: shape.ffn,
        vocab_size: vocab.size(),
        max_tokens: shape.max_tokens,
        layer_norm_eps: 1e-12,
        seed,
    };
    Ok(init_encoder(config, vocab)?)
}

/// Embedding rows for every corpus sentence, in corpus order. Extra rows in
/// the embedding file are ignored (the corpus may be a subset); a sentence
/// without a row is an error.
fn vectors_for(embeddings: &[PooledVector], corpus: &Corpus) -> Result<Vec<Vec<f64>>> {
    let by_id: HashMap<&str, &PooledVector> = embeddings
        .iter()
        .map(|v| (v.sentence_id.as_str(), v))
        .collect();
    let mut vectors = Vec::with_capacity(corpus.len());
    let mut missing = 0usize;
    let mut first_missing = None;
    for s in corpus.sentences() {
        match by_id.get(s.id.as_str()) {
            Some(v) => vectors.push(v.values.to_vec()),
            None => {
                missing += 1;
                first_missing.get_or_insert_with(|| s.id.clone());
            }
        }
    }
    if missing > 0 {
        bail!(
            "{missing} corpus sentences have no embedding row (first: {}); \
             were these embeddings pooled from this corpus?",
            first_missing.unwrap()
        );
    }
    Ok(vectors)
}

/// The mode label shared by an embedding file's rows, e.g. "2".
fn embeddings_mode(embeddings: &[PooledVector]) -> String {
    embeddings
        .first()
        .map(|v| v.mode.number().to_string())
        .unwrap_or_default()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------- commands

fn cmd_synth(a: SynthArgs, mut manifest: RunManifest) -> Result<()> {
    ensure_writable(&a.out, a.force)?;
    let corpus = synthesize_corpus(a.n, a.positive_rate, derive_seed(a.seed, "synth"), a.vocab_size)?;
    corpus.save(&a.out, corpus_format(&a.out, a.format))?;
    manifest.add_output(&a.out);
    manifest.write_for(&a.out)?;
    let positives = corpus.unfair_labels().iter().filter(|&&l| l == 1).count();
    println!(
        "wrote {} sentences ({} unfair, {:.1}%) to {}",
        corpus.len(),
        positives,
        100.0 * positives as f64 / corpus.len() as f64,
        a.out.display()
    );
    Ok(())
}

fn cmd_split(a: SplitArgs, mut manifest: RunManifest) -> Result<()> {
    ensure_writable(&a.out_train, a.force)?;
    ensure_writable(&a.out_test, a.force)?;
    manifest.add_input(&a.input)?;
    let corpus = load_corpus(&a.input, a.format)?;
    let spec = SplitSpec {
        test_fraction: a.test_fraction,
        seed: derive_seed(a.seed, "split"),
        stratify_on: parse_stratify(&a.stratify)?,
    };
    let (train, test) = train_test_split(&corpus, &spec)?;
    train.save(&a.out_train, corpus_format(&a.out_train, a.format))?;
    test.save(&a.out_test, corpus_format(&a.out_test, a.format))?;
    manifest.add_output(&a.out_train);
    manifest.add_output(&a.out_test);
    manifest.write_for(&a.out_train)?;
    println!(
        "train: {} sentences -> {}",
        train.len(),
        a.out_train.display()
    );
    println!("test:  {} sentences -> {}", test.len(), a.out_test.display());
    Ok(())
}

fn cmd_encode(a: EncodeArgs, mut manifest: RunManifest) -> Result<()> {
    ensure_writable(&a.out, a.force)?;
    manifest.add_input(&a.corpus)?;
    let corpus = load_corpus(&a.corpus, None)?;
    let model = fresh_encoder(&corpus, &a.shape, derive_seed(a.seed, "encode"))?;
    save_checkpoint(&a.out, &model, None)?;
    manifest.add_output(&a.out);
    manifest.write_for(&a.out)?;
    println!(
        "initialized encoder ({} layers, hidden {}, vocab {}) -> {}",
        model.config.num_layers,
        model.config.hidden_dim,
        model.config.vocab_size,
        a.out.display()
    );
    Ok(())
}

fn cmd_pretrain(a: PretrainArgs, mut manifest: RunManifest) -> Result<()> {
    ensure_writable(&a.out, a.force)?;
    manifest.add_input(&a.corpus)?;
    let corpus = load_corpus(&a.corpus, None)?;
    let model = load_or_init_model(
        a.model.as_deref(),
        &corpus,
        &a.shape,
        derive_seed(a.seed, "encode"),
        &mut manifest,
    )?;
    if a.steps == 0 {
        save_checkpoint(&a.out, &model, None)?;
        manifest.add_output(&a.out);
        manifest.write_for(&a.out)?;
        println!("saved untrained baseline -> {}", a.out.display());
        return Ok(());
    }
    let (trained, trace) = pretrain_mlm_traced(
        &model,
        &corpus,
        a.mask_rate,
        a.steps,
        a.lr,
        derive_seed(a.seed, "pretrain"),
    )?;
    save_checkpoint(&a.out, &trained, None)?;
    manifest.add_output(&a.out);
    manifest.write_for(&a.out)?;
    let first = trace.holdout_losses.first().copied().unwrap_or(f64::NAN);
    let last = trace.holdout_losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "pretrained {} steps (holdout loss {:.4} -> {:.4}) -> {}",
        a.steps,
        first,
        last,
        a.out.display()
    );
    Ok(())
}

fn cmd_finetune(a: FinetuneArgs, mut manifest: RunManifest) -> Result<()> {
    ensure_writable(&a.out, a.force)?;
    manifest.add_input(&a.corpus)?;
    let corpus = load_corpus(&a.corpus, None)?;
    let model = load_or_init_model(
        a.model.as_deref(),
        &corpus,
        &a.shape,
        derive_seed(a.seed, "encode"),
        &mut manifest,
    )?;
    let cfg = FineTuneConfig {
        batch_size: a.batch_size,
        learning_rate: a.lr,
        epochs: a.epochs,
        head: parse_head_spec(&a.head)?,
        seed: derive_seed(a.seed, "finetune"),
    };
    let (tuned, trace) = utos_core::finetune_base_traced(&model, &corpus, &cfg)?;
    save_checkpoint(&a.out, &tuned, None)?;
    manifest.add_output(&a.out);
    manifest.write_for(&a.out)?;
    let accuracy = trace.epoch_accuracies.last().copied().unwrap_or(f64::NAN);
    println!(
        "fine-tuned {} epochs (final train accuracy {:.3}) -> {}",
        a.epochs,
        accuracy,
        a.out.display()
    );
    Ok(())
}

fn cmd_pool(a: PoolArgs, mut manifest: RunManifest) -> Result<()> {
    let modes = parse_modes(&a.mode)?;
    manifest.add_input(&a.model)?;
    manifest.add_input(&a.corpus)?;
    let (model, _) = load_checkpoint(&a.model)?;
    let corpus = load_corpus(&a.corpus, None)?;

    // The pooled layer axis is the embedding layer plus each block.
    let available = model.config.num_layers + 1;
    for mode in &modes {
        if let Some(k) = mode.top_k() {
            if available < k {
                bail!(
                    "mode {} pools the top {k} layers but the model provides \
                     {available} (embedding + {} blocks); re-encode with --layers >= {}",
                    mode.number(),
                    model.config.num_layers,
                    k - 1
                );
            }
        }
    }

    let prefix = a.prefix.clone().unwrap_or_else(|| {
        a.corpus
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "corpus".into())
    });
    let out_paths: Vec<PathBuf> = modes
        .iter()
        .map(|m| a.out_dir.join(format!("{prefix}-mode{}.tsv", m.number())))
        .collect();
    for path in &out_paths {
        ensure_writable(path, a.force)?;
    }

    for (mode, path) in modes.iter().zip(&out_paths) {
        let vectors = pool_corpus(&model, &corpus, *mode)?;
        write_embeddings(path, &vectors)?;
        manifest.add_output(path);
        println!(
            "mode {}: {} embeddings (dim {}) -> {}",
            mode.number(),
            vectors.len(),
            vectors.first().map_or(0, |v| v.values.len()),
            path.display()
        );
    }
    let manifest_file = a.out_dir.join(format!("{prefix}-pool.manifest.json"));
    manifest.write_to(&manifest_file)?;
    Ok(())
}

fn grid_spec_from(
    c_grid: &[f64],
    gamma_grid: &[utos_core::GammaSpec],
    scaler: ScalerChoice,
    folds: usize,
    scoring: &str,
    no_smote: bool,
    smote_k: usize,
    seed: u64,
) -> Result<GridSpec> {
    Ok(GridSpec {
        c_values: c_grid.to_vec(),
        gamma_values: gamma_grid.to_vec(),
        scaler_options: scaler_options(scaler),
        folds,
        scoring: scoring.parse::<Scoring>().map_err(|e| anyhow!(e))?,
        smote: (!no_smote).then_some(SmoteConfig {
            k_neighbors: smote_k,
            target_ratio: 1.0,
            seed: 0,
        }),
        seed,
    })
}

/// Fixed-width (or CSV) table of every evaluated grid config.
fn render_config_table(report: &ExperimentReport, csv: bool) -> String {
    let scoring = match report.scoring {
        Scoring::MacroF1 => "macro_f1",
        Scoring::MicroF1 => "micro_f1",
    };
    let mut rows = Vec::with_capacity(report.configs.len());
    for (i, spec) in report.configs.iter().enumerate() {
        rows.push((
            i == report.best_index,
            spec.svc.c.to_string(),
            spec.svc.gamma.to_string(),
            if spec.use_scaler { "on" } else { "off" },
            if spec.smote.is_some() { "on" } else { "off" },
            format!("{:.4}", report.cv_mean(i)),
        ));
    }
    let mut out = String::new();
    if csv {
        let _ = writeln!(out, "c,gamma,scaler,smote,cv_{scoring},best");
        for (best, c, gamma, scaler, smote, mean) in rows {
            let _ = writeln!(
                out,
                "{c},{gamma},{scaler},{smote},{mean},{}",
                if best { "1" } else { "0" }
            );
        }
    } else {
        let _ = writeln!(
            out,
            "   {:>8}  {:>8}  {:>6}  {:>5}  cv {}",
            "C", "gamma", "scaler", "smote", scoring
        );
        for (best, c, gamma, scaler, smote, mean) in rows {
            let _ = writeln!(
                out,
                " {} {c:>8}  {gamma:>8}  {scaler:>6}  {smote:>5}  {mean}",
                if best { "*" } else { " " }
            );
        }
    }
    out
}

fn cmd_grid(a: GridArgs, mut manifest: RunManifest) -> Result<()> {
    ensure_writable(&a.out, a.force)?;
    if let Some(table_out) = &a.table_out {
        ensure_writable(table_out, a.force)?;
    }
    manifest.add_input(&a.train_embeddings)?;
    manifest.add_input(&a.train_corpus)?;

    let train_embeddings = load_external_embeddings(&a.train_embeddings)?;
    let train_corpus = load_corpus(&a.train_corpus, None)?;
    let vectors = vectors_for(&train_embeddings, &train_corpus)?;
    let labels = train_corpus.unfair_labels();

    let grid = grid_spec_from(
        &a.c_grid,
        &a.gamma_grid,
        a.scaler,
        a.folds,
        &a.scoring,
        a.no_smote,
        a.smote_k,
        a.seed,
    )?;
    let mut outcome = grid_search(&vectors, &labels, &grid, derive_seed(a.seed, "grid"))?;
    outcome.report.provenance = Provenance {
        corpus_hash: train_corpus.content_hash(),
        seed: a.seed,
        mode: embeddings_mode(&train_embeddings),
        methodology: a.methodology.label().into(),
        model: a.model_label.clone(),
    };

    if let (Some(test_emb_path), Some(test_corpus_path)) = (&a.test_embeddings, &a.test_corpus) {
        manifest.add_input(test_emb_path)?;
        manifest.add_input(test_corpus_path)?;
        let test_embeddings = load_external_embeddings(test_emb_path)?;
        let test_corpus = load_corpus(test_corpus_path, None)?;
        let test_vectors = vectors_for(&test_embeddings, &test_corpus)?;
        let test_labels = test_corpus.unfair_labels();
        attach_test_metrics(&mut outcome.report, &outcome.model, &test_vectors, &test_labels)?;
    }

    let json = serde_json::to_string_pretty(&outcome.report)?;
    write_text(&a.out, &(json + "\n"))?;
    manifest.add_output(&a.out);

    let csv = matches!(a.format, Some(FormatChoice::Csv));
    if matches!(a.format, Some(FormatChoice::Jsonl)) {
        bail!("the config table renders as fixed-width text or csv, not jsonl");
    }
    let table = render_config_table(&outcome.report, csv);
    if let Some(table_out) = &a.table_out {
        write_text(table_out, &table)?;
        manifest.add_output(table_out);
    }
    manifest.write_for(&a.out)?;

    print!("{table}");
    let best = &outcome.report.best_params;
    println!(
        "best: C={} gamma={} scaler={} smote={} (cv {:.4})",
        best.svc.c,
        best.svc.gamma,
        if best.use_scaler { "on" } else { "off" },
        if best.smote.is_some() { "on" } else { "off" },
        outcome.report.best_cv_mean
    );
    if let Some(m) = &outcome.report.test_metrics {
        println!(
            "test: macro F1 {:.4}, micro F1 {:.4}, accuracy {:.4}",
            m.macro_avg.f1,
            m.micro.f1,
            m.accuracy()
        );
    }
    println!("report -> {}", a.out.display());
    Ok(())
}

/// One row of the per-category evaluation.
#[derive(Debug, serde::Serialize)]
struct TagOutcome {
    category: String,
    name: String,
    train_size: usize,
    train_positives: usize,
    test_size: usize,
    test_positives: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    skipped: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    best: Option<BestConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cv_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_metrics: Option<MetricSet>,
}

#[derive(Debug, serde::Serialize)]
struct BestConfig {
    c: f64,
    gamma: String,
    scaler: bool,
    smote: bool,
}

/// Collapse a multi-line reason into one table cell.
fn flatten(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn render_tag_table(rows: &[TagOutcome], csv: bool) -> String {
    let mut out = String::new();
    if csv {
        let _ = writeln!(
            out,
            "category,train_n,train_pos,test_n,test_pos,cv_mean,test_macro_f1,status"
        );
        for r in rows {
            let cv = r.cv_mean.map(|v| format!("{v:.4}")).unwrap_or_default();
            let f1 = r
                .test_metrics
                .as_ref()
                .map(|m| format!("{:.4}", m.macro_avg.f1))
                .unwrap_or_default();
            let status = flatten(r.skipped.as_deref().unwrap_or("ok"));
            let _ = writeln!(
                out,
                "{},{},{},{},{},{cv},{f1},{}",
                r.category, r.train_size, r.train_positives, r.test_size, r.test_positives,
                status.replace(',', ";")
            );
        }
    } else {
        let _ = writeln!(
            out,
            "{:<4} {:>8} {:>7} {:>7} {:>6} {:>8} {:>13}  status",
            "tag", "train_n", "tr_pos", "test_n", "te_pos", "cv", "test macro_f1"
        );
        for r in rows {
            let cv = r.cv_mean.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
            let f1 = r
                .test_metrics
                .as_ref()
                .map(|m| format!("{:.4}", m.macro_avg.f1))
                .unwrap_or_else(|| "-".into());
            let status = flatten(r.skipped.as_deref().unwrap_or("ok"));
            let _ = writeln!(
                out,
                "{:<4} {:>8} {:>7} {:>7} {:>6} {:>8} {:>13}  {status}",
                r.category, r.train_size, r.train_positives, r.test_size, r.test_positives,
                cv, f1
            );
        }
    }
    out
}

fn cmd_eval_tags(a: EvalTagsArgs, mut manifest: RunManifest) -> Result<()> {
    ensure_writable(&a.out, a.force)?;
    if let Some(table_out) = &a.table_out {
        ensure_writable(table_out, a.force)?;
    }
    for input in [
        &a.train_embeddings,
        &a.train_corpus,
        &a.test_embeddings,
        &a.test_corpus,
    ] {
        manifest.add_input(input)?;
    }

    let train_embeddings = load_external_embeddings(&a.train_embeddings)?;
    let test_embeddings = load_external_embeddings(&a.test_embeddings)?;
    // Category tags are only defined on the unfair population.
    let train_sub = load_corpus(&a.train_corpus, None)?.unfair_subset()?;
    let test_sub = load_corpus(&a.test_corpus, None)?.unfair_subset()?;
    let train_vectors = vectors_for(&train_embeddings, &train_sub)?;
    let test_vectors = vectors_for(&test_embeddings, &test_sub)?;

    let mut rows = Vec::with_capacity(Category::ALL.len());
    for category in Category::ALL {
        let labels = train_sub.category_labels(category);
        let test_labels = test_sub.category_labels(category);
        let positives = labels.iter().filter(|&&l| l == 1).count();
        let negatives = labels.len() - positives;
        let test_positives = test_labels.iter().filter(|&&l| l == 1).count();
        let mut row = TagOutcome {
            category: category.key().into(),
            name: category.name().into(),
            train_size: labels.len(),
            train_positives: positives,
            test_size: test_labels.len(),
            test_positives,
            skipped: None,
            best: None,
            cv_mean: None,
            test_metrics: None,
        };
        if positives < a.folds || negatives < a.folds {
            row.skipped = Some(format!(
                "class counts {positives}/{negatives} cannot fill {} stratified folds",
                a.folds
            ));
            rows.push(row);
            continue;
        }
        let grid = grid_spec_from(
            &a.c_grid,
            &a.gamma_grid,
            a.scaler,
            a.folds,
            &a.scoring,
            a.no_smote,
            a.smote_k,
            a.seed,
        )?;
        let seed = derive_seed(a.seed, &format!("tags/{}", category.key()));
        match grid_search(&train_vectors, &labels, &grid, seed) {
            Ok(mut outcome) => {
                attach_test_metrics(
                    &mut outcome.report,
                    &outcome.model,
                    &test_vectors,
                    &test_labels,
                )?;
                let best = &outcome.report.best_params;
                row.best = Some(BestConfig {
                    c: best.svc.c,
                    gamma: best.svc.gamma.to_string(),
                    scaler: best.use_scaler,
                    smote: best.smote.is_some(),
                });
                row.cv_mean = Some(outcome.report.best_cv_mean);
                row.test_metrics = outcome.report.test_metrics.clone();
            }
            Err(e) => row.skipped = Some(e.to_string()),
        }
        rows.push(row);
    }

    let json = serde_json::to_string_pretty(&rows)?;
    write_text(&a.out, &(json + "\n"))?;
    manifest.add_output(&a.out);

    let csv = matches!(a.format, Some(FormatChoice::Csv));
    if matches!(a.format, Some(FormatChoice::Jsonl)) {
        bail!("the category table renders as fixed-width text or csv, not jsonl");
    }
    let table = render_tag_table(&rows, csv);
    if let Some(table_out) = &a.table_out {
        write_text(table_out, &table)?;
        manifest.add_output(table_out);
    }
    manifest.write_for(&a.out)?;

    print!("{table}");
    println!("results -> {}", a.out.display());
    Ok(())
}

/// Expand --inputs into a sorted list of report files; directories
/// contribute their `*.json` entries, manifests excluded.
fn collect_report_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(input)
                .with_context(|| format!("listing {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension().and_then(|e| e.to_str()) == Some("json")
                        && !p
                            .file_name()
                            .map(|n| n.to_string_lossy().ends_with(".manifest.json"))
                            .unwrap_or(false)
                })
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(input.clone());
        }
    }
    ensure!(!files.is_empty(), "no report files found under --inputs");
    Ok(files)
}

fn cmd_report(a: ReportArgs, mut manifest: RunManifest) -> Result<()> {
    ensure_writable(&a.out, a.force)?;
    let files = collect_report_files(&a.inputs)?;
    let mut reports = Vec::with_capacity(files.len());
    for file in &files {
        manifest.add_input(file)?;
        let text = std::fs::read_to_string(file)
            .with_context(|| format!("reading report {}", file.display()))?;
        let report: ExperimentReport = serde_json::from_str(&text)
            .with_context(|| format!("parsing report {}", file.display()))?;
        reports.push(report);
    }

    let csv = matches!(a.format, Some(FormatChoice::Csv));
    if matches!(a.format, Some(FormatChoice::Jsonl)) {
        bail!("tables render as fixed-width text or csv, not jsonl");
    }
    let group_override = a
        .group_by
        .as_deref()
        .map(|s| s.parse::<GroupBy>().map_err(|e| anyhow!(e)))
        .transpose()?;
    let stat = a.stat.parse::<Stat>().map_err(|e| anyhow!(e))?;
    let table = match a.table {
        crate::TableKind::Binary => render_binary_table(&reports, csv)?,
        crate::TableKind::Rq1 => {
            let t = aggregate_reports(&reports, group_override.unwrap_or(GroupBy::Model), stat)?;
            if csv { t.render_csv() } else { t.render_text() }
        }
        crate::TableKind::Rq2 => {
            let t = aggregate_reports(&reports, group_override.unwrap_or(GroupBy::Mode), stat)?;
            if csv { t.render_csv() } else { t.render_text() }
        }
    };

    write_text(&a.out, &table)?;
    manifest.add_output(&a.out);
    manifest.write_for(&a.out)?;
    print!("{table}");
    println!("table -> {}", a.out.display());
    Ok(())
}

fn cmd_rerun(a: RerunArgs, _jobs: usize) -> Result<()> {
    let recorded = read_manifest(&a.manifest)?;
    ensure!(
        recorded.command != "rerun",
        "{} records a rerun invocation; nothing to replay",
        a.manifest.display()
    );
    let full: Vec<String> = std::iter::once("utos".to_string())
        .chain(recorded.argv.iter().cloned())
        .collect();
    let cli = Cli::try_parse_from(&full).with_context(|| {
        format!(
            "the argv recorded in {} no longer parses",
            a.manifest.display()
        )
    })?;
    let mut command = cli.command;
    ensure!(
        command.name() == recorded.command,
        "manifest says command `{}` but its argv parses as `{}`",
        recorded.command,
        command.name()
    );
    // Record the original invocation verbatim (resolved flags captured
    // before forcing), then overwrite the recorded outputs — that is the
    // point of a replay. The worker-pool size stays as set by this process;
    // outputs never depend on scheduling.
    let resolved = resolved_flags(&command)?;
    let manifest = RunManifest::new(command.name(), &recorded.argv, resolved, cli.jobs);
    command.force_outputs();
    eprintln!("replaying: utos {}", recorded.argv.join(" "));
    run(command, manifest)
}
