//! End-to-end command tests: artifact layout, overwrite protection,
//! usage-error exit codes, manifest contents, and graceful degradation
//! when a category has too little data to evaluate.

mod common;

use std::path::Path;

use common::{report_fixture, run_ok, utos, write_report};

fn read(dir: &Path, rel: &str) -> String {
    std::fs::read_to_string(dir.join(rel)).unwrap_or_else(|e| panic!("reading {rel}: {e}"))
}

/// Spawn the binary expecting failure; return (exit code, stderr).
fn run_err(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = utos(dir, args);
    assert!(
        !out.status.success(),
        "utos {} unexpectedly succeeded:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stdout),
    );
    (
        out.status.code().expect("exit code"),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn pool_all_writes_one_embedding_file_per_mode_plus_a_manifest() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = tmp.path();
    run_ok(
        dir,
        &[
            "synth", "--n", "60", "--positive-rate", "0.2", "--vocab-size", "24", "--seed", "3",
            "--out", "corpus.jsonl",
        ],
    );
    // Modes 7 and 8 pool the top six layers, so five blocks plus the
    // embedding layer is the smallest shape that supports --mode all.
    run_ok(
        dir,
        &[
            "encode", "--corpus", "corpus.jsonl", "--layers", "5", "--hidden", "8", "--heads",
            "2", "--ffn", "16", "--max-tokens", "12", "--vocab-max", "64", "--seed", "3", "--out",
            "enc.utos",
        ],
    );
    run_ok(
        dir,
        &["pool", "--model", "enc.utos", "--corpus", "corpus.jsonl", "--mode", "all", "--out-dir", "emb"],
    );
    for mode in 1..=8 {
        let text = read(dir, &format!("emb/corpus-mode{mode}.tsv"));
        assert_eq!(
            text.lines().next(),
            Some(format!("#utos-embeddings v1 dim=8 mode={mode}").as_str()),
        );
        assert_eq!(text.lines().count(), 61, "header plus one row per sentence");
    }
    assert!(dir.join("emb/corpus-pool.manifest.json").exists());
}

#[test]
fn existing_outputs_are_protected_without_force() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = tmp.path();
    let synth: &[&str] = &["synth", "--n", "30", "--seed", "1", "--out", "corpus.jsonl"];
    run_ok(dir, synth);
    let (code, stderr) = run_err(dir, synth);
    assert_eq!(code, 1);
    assert!(
        stderr.contains("already exists; pass --force to overwrite"),
        "unhelpful overwrite refusal: {stderr}"
    );
    let mut forced = synth.to_vec();
    forced.push("--force");
    run_ok(dir, &forced);
}

#[test]
fn manifests_record_the_full_invocation() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = tmp.path();
    run_ok(
        dir,
        &["synth", "--n", "30", "--positive-rate", "0.3", "--seed", "9", "--out", "corpus.jsonl"],
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&read(dir, "corpus.jsonl.manifest.json")).expect("manifest JSON");
    assert_eq!(manifest["tool"], "utos");
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["argv"][0], "synth");
    assert_eq!(manifest["resolved"]["n"], 30);
    assert_eq!(manifest["resolved"]["positive_rate"], 0.3);
    // Defaults are resolved into the manifest even when not on the argv.
    assert_eq!(manifest["resolved"]["vocab_size"], 48);
    assert_eq!(manifest["outputs"], serde_json::json!(["corpus.jsonl"]));
}

#[test]
fn pool_refuses_modes_the_model_has_too_few_layers_for() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = tmp.path();
    run_ok(dir, &["synth", "--n", "30", "--seed", "1", "--out", "corpus.jsonl"]);
    run_ok(
        dir,
        &[
            "encode", "--corpus", "corpus.jsonl", "--layers", "2", "--hidden", "8", "--heads",
            "2", "--ffn", "16", "--max-tokens", "12", "--vocab-max", "64", "--seed", "1", "--out",
            "enc.utos",
        ],
    );
    let (code, stderr) = run_err(
        dir,
        &["pool", "--model", "enc.utos", "--corpus", "corpus.jsonl", "--mode", "8", "--out-dir", "emb"],
    );
    assert_eq!(code, 1);
    assert!(
        stderr.contains("pools the top 6 layers") && stderr.contains("re-encode with --layers >= 5"),
        "layer guard should name the shortfall and the fix: {stderr}"
    );
    assert!(!dir.join("emb").exists(), "no partial outputs on refusal");
}

#[test]
fn malformed_flag_values_exit_with_a_usage_error() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = tmp.path();
    let (code, _) = run_err(dir, &["synth", "--n", "twelve", "--out", "corpus.jsonl"]);
    assert_eq!(code, 2, "non-numeric --n is a usage error");
    let (code, stderr) = run_err(dir, &["report", "--inputs", "x", "--table", "rq9", "--out", "t"]);
    assert_eq!(code, 2, "unknown table kind is a usage error");
    assert!(stderr.contains("rq9"), "the bad value should be named: {stderr}");
}

#[test]
fn report_tables_reject_the_jsonl_format() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = tmp.path();
    write_report(
        &dir.join("r.json"),
        &report_fixture("toy", "baseline", "1", 0.8, false),
    );
    let (code, stderr) = run_err(
        dir,
        &[
            "report", "--inputs", "r.json", "--table", "binary", "--format", "jsonl", "--out",
            "t.txt",
        ],
    );
    assert_eq!(code, 1);
    assert!(
        stderr.contains("fixed-width text or csv, not jsonl"),
        "format rejection should say what is supported: {stderr}"
    );
}

#[test]
fn eval_tags_skips_categories_that_cannot_fill_the_folds() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = tmp.path();
    run_ok(
        dir,
        &[
            "synth", "--n", "60", "--positive-rate", "0.2", "--vocab-size", "24", "--seed", "11",
            "--out", "corpus.jsonl",
        ],
    );
    run_ok(
        dir,
        &[
            "split", "--input", "corpus.jsonl", "--test-fraction", "0.25", "--seed", "11",
            "--out-train", "train.jsonl", "--out-test", "test.jsonl",
        ],
    );
    run_ok(
        dir,
        &[
            "encode", "--corpus", "train.jsonl", "--layers", "2", "--hidden", "8", "--heads",
            "2", "--ffn", "16", "--max-tokens", "12", "--vocab-max", "64", "--seed", "11",
            "--out", "enc.utos",
        ],
    );
    for (corpus, prefix) in [("train.jsonl", "train"), ("test.jsonl", "test")] {
        run_ok(
            dir,
            &[
                "pool", "--model", "enc.utos", "--corpus", corpus, "--mode", "2", "--out-dir",
                "emb", "--prefix", prefix,
            ],
        );
    }
    // Twelve unfair sentences spread over eight categories cannot fill
    // five stratified folds everywhere; the command must still succeed
    // and say per category why it skipped.
    run_ok(
        dir,
        &[
            "eval-tags", "--train-embeddings", "emb/train-mode2.tsv", "--train-corpus",
            "train.jsonl", "--test-embeddings", "emb/test-mode2.tsv", "--test-corpus",
            "test.jsonl", "--folds", "5", "--c-grid", "1", "--gamma-grid", "auto", "--scaler",
            "off", "--no-smote", "--seed", "11", "--out", "tags.json", "--table-out",
            "tags-table.txt",
        ],
    );
    let rows: serde_json::Value = serde_json::from_str(&read(dir, "tags.json")).expect("tags JSON");
    let rows = rows.as_array().expect("tags row array");
    assert_eq!(rows.len(), 8, "one row per category");
    let skipped: Vec<&str> = rows
        .iter()
        .filter_map(|r| r["skipped"].as_str())
        .collect();
    assert!(
        skipped.iter().any(|s| s.contains("stratified folds")),
        "expected at least one fold-shortfall skip, got {skipped:?}"
    );
    for row in rows {
        assert!(
            row["skipped"].is_string() || row["cv_mean"].is_number(),
            "every category either evaluates or explains itself: {row}"
        );
    }
    assert!(read(dir, "tags-table.txt").contains("status"));
}
