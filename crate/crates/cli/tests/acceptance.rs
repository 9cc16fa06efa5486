//! Acceptance gates 8 and 9, exercised through the real `utos` binary:
//! aggregate report tables must reproduce the published layout and
//! figures, and replaying any command from its run manifest must rewrite
//! every output byte for byte, worker count included. Gates 1–7 (the
//! numeric oracles) live in the core crate's acceptance suite.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::{report_fixture as fixture, run_ok, write_report};

/// One pass/fail line per gate; the assert repeats the line so failures
/// surface in both the captured output and the panic message.
fn verdict(gate: u32, name: &str, ok: bool, detail: &str) {
    let status = if ok { "PASS" } else { "FAIL" };
    let line = format!("ACCEPTANCE {gate} ({name}): {status} — {detail}");
    println!("{line}");
    assert!(ok, "{line}");
}

fn tokens(line: &str) -> Vec<&str> {
    line.split_whitespace().collect()
}

#[test]
fn acceptance_8_report_tables_match_published_layout() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = tmp.path();
    let reports = dir.join("reports");
    fs::create_dir(&reports).expect("mkdir reports");

    // Two mode variants per (model, methodology) cell. At --stat max the
    // higher variant must win, giving the first row the published reading
    // 0.86 / 0.921 / 0.874 / 0.922 with row mean 0.894. Mode-2 variants
    // ran with the scaler so the binary table shows both pipeline tags.
    let cells: [(&str, [(&str, f64, f64); 4]); 2] = [
        (
            "Legal-BERT",
            [
                ("baseline", 0.847, 0.86),
                ("finetune-base", 0.92, 0.921),
                ("pretrained", 0.863, 0.874),
                ("pretrained-finetuned", 0.917, 0.922),
            ],
        ),
        (
            "BERT",
            [
                ("baseline", 0.81, 0.82),
                ("finetune-base", 0.88, 0.89),
                ("pretrained", 0.84, 0.85),
                ("pretrained-finetuned", 0.9, 0.91),
            ],
        ),
    ];
    for (prefix, (model, rows)) in ["a", "b"].iter().zip(&cells) {
        for (i, (methodology, lo, hi)) in rows.iter().enumerate() {
            let lo_file = reports.join(format!("{prefix}{:02}.json", 2 * i));
            let hi_file = reports.join(format!("{prefix}{:02}.json", 2 * i + 1));
            write_report(&lo_file, &fixture(model, methodology, "1", *lo, false));
            write_report(&hi_file, &fixture(model, methodology, "2", *hi, true));
        }
    }

    let mut failures: Vec<String> = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };

    // Per-model table, text. Rows are models, columns the four training
    // methodologies in conventional order, then the row average and the
    // statistic that filled the cells.
    run_ok(
        dir,
        &["report", "--inputs", "reports", "--table", "rq1", "--stat", "max", "--out", "rq1.txt"],
    );
    let rq1 = fs::read_to_string(dir.join("rq1.txt")).expect("reading rq1.txt");
    let lines: Vec<&str> = rq1.lines().collect();
    check(
        lines.len() == 4,
        &format!("rq1 table should have header, rule, and 2 rows; got {} lines", lines.len()),
    );
    check(
        tokens(lines[0])
            == vec![
                "Transformer",
                "baseline",
                "finetune-base",
                "pretrained",
                "pretrained-finetuned",
                "Av.",
                "Stat.",
            ],
        &format!("rq1 header mismatch: {}", lines[0]),
    );
    let first_row = tokens(lines[2]);
    check(
        first_row == vec!["Legal-BERT", "0.86", "0.921", "0.874", "0.922", "0.894", "max"],
        &format!("rq1 first row mismatch: {}", lines[2]),
    );
    check(
        tokens(lines[3]).first() == Some(&"BERT") && tokens(lines[3]).len() == 7,
        &format!("rq1 second row mismatch: {}", lines[3]),
    );

    // The CSV rendering carries the same cells.
    run_ok(
        dir,
        &[
            "report", "--inputs", "reports", "--table", "rq1", "--stat", "max", "--format", "csv",
            "--out", "rq1.csv",
        ],
    );
    let rq1_csv = fs::read_to_string(dir.join("rq1.csv")).expect("reading rq1.csv");
    check(
        rq1_csv.lines().nth(1) == Some("Legal-BERT,0.86,0.921,0.874,0.922,0.894,max"),
        &format!("rq1 csv row mismatch: {:?}", rq1_csv.lines().nth(1)),
    );

    // Per-mode table: one row per embedding mode 1..8, model columns then
    // methodology columns, and no average/stat columns.
    let modes = dir.join("modes");
    fs::create_dir(&modes).expect("mkdir modes");
    for mode in 1..=8u32 {
        let methodology = if mode % 2 == 1 { "baseline" } else { "finetune-base" };
        let f1 = 0.8 + mode as f64 / 100.0;
        write_report(
            &modes.join(format!("m{mode}.json")),
            &fixture("Legal-BERT", methodology, &mode.to_string(), f1, false),
        );
    }
    run_ok(
        dir,
        &["report", "--inputs", "modes", "--table", "rq2", "--stat", "mean", "--out", "rq2.txt"],
    );
    let rq2 = fs::read_to_string(dir.join("rq2.txt")).expect("reading rq2.txt");
    let rq2_lines: Vec<&str> = rq2.lines().collect();
    check(
        tokens(rq2_lines[0]) == vec!["Mode", "Legal-BERT", "baseline", "finetune-base"],
        &format!("rq2 header mismatch: {}", rq2_lines[0]),
    );
    let mode_labels: Vec<&str> = rq2_lines[2..]
        .iter()
        .filter_map(|l| tokens(l).first().copied())
        .collect();
    check(
        mode_labels == vec!["1", "2", "3", "4", "5", "6", "7", "8"],
        &format!("rq2 rows should cover modes 1..8 in order: {mode_labels:?}"),
    );
    check(!rq2.contains("Av."), "rq2 table must not carry an average column");

    // Binary results table: one row per report with the selected
    // hyperparameters, the scaler/mode pipeline tag, and macro P/R/F1.
    run_ok(
        dir,
        &["report", "--inputs", "reports", "--table", "binary", "--out", "binary.txt"],
    );
    let binary = fs::read_to_string(dir.join("binary.txt")).expect("reading binary.txt");
    let header = binary.lines().next().unwrap_or_default();
    for col in ["Transformer model", "Methodology", "(c,gamma)[model]", "P", "R", "F1"] {
        check(header.contains(col), &format!("binary header lacks {col}: {header}"));
    }
    check(
        binary.lines().count() == 2 + 16,
        &format!("binary table should list all 16 reports; got {} lines", binary.lines().count()),
    );
    let target = binary
        .lines()
        .find(|l| l.starts_with("Legal-BERT") && l.contains("pretrained-finetuned") && l.contains("[SS-2]"));
    match target {
        Some(line) => {
            let cells = tokens(line);
            check(
                line.contains("(10,0.001) [SS-2]")
                    && cells[cells.len() - 3..] == ["0.922", "0.922", "0.922"],
                &format!("binary row mismatch: {line}"),
            );
        }
        None => check(false, "binary table lacks the Legal-BERT [SS-2] row"),
    }

    let detail = if failures.is_empty() {
        "rq1 row Legal-BERT 0.86/0.921/0.874/0.922 mean 0.894 (text and csv); \
         rq2 modes 1..8 with model+methodology columns; binary 16 rows with \
         pipeline tags"
            .to_string()
    } else {
        failures.join("; ")
    };
    verdict(
        8,
        "report tables reproduce the published layout",
        failures.is_empty(),
        &detail,
    );
}

// ------------------------------------------------------------- gate 9

/// Every file under `root`, keyed by its path relative to `root`.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).expect("listing snapshot directory") {
            let path = entry.expect("directory entry").path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).expect("path under root").to_path_buf();
                out.insert(rel, fs::read(&path).expect("reading snapshot file"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn acceptance_9_rerun_replays_every_command_byte_identically() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = tmp.path();

    // A miniature end-to-end run touching every output-producing command:
    // synthesize, split, initialize, pretrain, fine-tune, pool both
    // portions, grid-search with a test evaluation, per-category
    // evaluation, and a rendered table.
    let pipeline: &[&[&str]] = &[
        &[
            "synth", "--n", "120", "--positive-rate", "0.2", "--vocab-size", "32", "--seed", "7",
            "--out", "corpus.jsonl",
        ],
        &[
            "split", "--input", "corpus.jsonl", "--test-fraction", "0.2", "--seed", "7",
            "--out-train", "train.jsonl", "--out-test", "test.jsonl",
        ],
        &[
            "encode", "--corpus", "train.jsonl", "--layers", "2", "--hidden", "8", "--heads", "2",
            "--ffn", "16", "--max-tokens", "12", "--vocab-max", "64", "--seed", "7", "--out",
            "base.utos",
        ],
        &[
            "pretrain", "--model", "base.utos", "--corpus", "train.jsonl", "--steps", "20",
            "--seed", "7", "--out", "pre.utos",
        ],
        &[
            "finetune", "--model", "pre.utos", "--corpus", "train.jsonl", "--head", "Dense(8)",
            "--epochs", "2", "--seed", "7", "--out", "fine.utos",
        ],
        &[
            "pool", "--model", "fine.utos", "--corpus", "train.jsonl", "--mode", "2", "--out-dir",
            "emb", "--prefix", "train",
        ],
        &[
            "pool", "--model", "fine.utos", "--corpus", "test.jsonl", "--mode", "2", "--out-dir",
            "emb", "--prefix", "test",
        ],
        &[
            "grid", "--train-embeddings", "emb/train-mode2.tsv", "--train-corpus", "train.jsonl",
            "--test-embeddings", "emb/test-mode2.tsv", "--test-corpus", "test.jsonl", "--folds",
            "3", "--c-grid", "1,10", "--gamma-grid", "0.01,auto", "--smote-k", "3",
            "--methodology", "finetune-base", "--model-label", "tiny", "--seed", "7", "--out",
            "report.json", "--table-out", "grid-table.txt",
        ],
        &[
            "eval-tags", "--train-embeddings", "emb/train-mode2.tsv", "--train-corpus",
            "train.jsonl", "--test-embeddings", "emb/test-mode2.tsv", "--test-corpus",
            "test.jsonl", "--folds", "2", "--c-grid", "1", "--gamma-grid", "auto", "--scaler",
            "off", "--no-smote", "--seed", "7", "--out", "tags.json", "--table-out",
            "tags-table.txt",
        ],
        &[
            "report", "--inputs", "report.json", "--table", "binary", "--out", "binary.txt",
        ],
    ];
    for args in pipeline {
        run_ok(dir, args);
    }

    let before = snapshot(dir);
    let manifests: Vec<&PathBuf> = before
        .keys()
        .filter(|p| p.to_string_lossy().ends_with(".manifest.json"))
        .collect();
    let expected: Vec<PathBuf> = [
        "base.utos.manifest.json",
        "binary.txt.manifest.json",
        "corpus.jsonl.manifest.json",
        "emb/test-pool.manifest.json",
        "emb/train-pool.manifest.json",
        "fine.utos.manifest.json",
        "pre.utos.manifest.json",
        "report.json.manifest.json",
        "tags.json.manifest.json",
        "train.jsonl.manifest.json",
    ]
    .iter()
    .map(PathBuf::from)
    .collect();
    assert_eq!(
        manifests.iter().map(|p| p.as_path()).collect::<Vec<_>>(),
        expected.iter().map(|p| p.as_path()).collect::<Vec<_>>(),
        "one manifest per producing command"
    );

    // Replay every manifest on a two-worker pool: outputs and the
    // rewritten manifests must not move by a single byte.
    for manifest in &manifests {
        run_ok(
            dir,
            &["--jobs", "2", "rerun", "--manifest", manifest.to_str().expect("utf-8 path")],
        );
    }

    let after = snapshot(dir);
    let mut failures: Vec<String> = Vec::new();
    for path in before.keys() {
        if !after.contains_key(path) {
            failures.push(format!("{} disappeared after rerun", path.display()));
        }
    }
    for (path, bytes) in &after {
        match before.get(path) {
            None => failures.push(format!("{} appeared during rerun", path.display())),
            Some(original) if original != bytes => {
                failures.push(format!("{} changed after rerun", path.display()));
            }
            Some(_) => {}
        }
    }

    let detail = if failures.is_empty() {
        format!(
            "{} manifests replayed with --jobs 2; {} files byte-identical; {:.1}s",
            manifests.len(),
            before.len(),
            start.elapsed().as_secs_f64()
        )
    } else {
        failures.join("; ")
    };
    verdict(
        9,
        "manifest replays rewrite every output byte-for-byte",
        failures.is_empty(),
        &detail,
    );
}
