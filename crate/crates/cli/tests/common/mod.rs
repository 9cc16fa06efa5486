//! Helpers shared by the CLI test suites: spawning the compiled `utos`
//! binary and fabricating experiment reports for the table commands.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use utos_core::{
    ClassMetrics, Confusion, ExperimentReport, GammaSpec, MetricSet, PipelineSpec, Provenance,
    Scoring, SmoteConfig, SvcHyperparams,
};

/// Run the compiled binary with `dir` as its working directory.
pub fn utos(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_utos"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("running the utos binary")
}

/// Run the binary and demand success, echoing both streams on failure.
pub fn run_ok(dir: &Path, args: &[&str]) {
    let out = utos(dir, args);
    assert!(
        out.status.success(),
        "utos {} exited with {:?}\n--- stdout ---\n{}--- stderr ---\n{}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}

/// Macro-averaged test metrics with the given figures (the per-class and
/// micro entries are irrelevant to table rendering but must be present).
fn metric_set(p: f64, r: f64, f1: f64) -> MetricSet {
    let c = ClassMetrics {
        precision: p,
        recall: r,
        f1,
    };
    MetricSet {
        per_class: [c.clone(), c.clone()],
        macro_avg: c.clone(),
        micro: c,
        confusion: Confusion {
            true_pos: 40,
            false_pos: 5,
            false_neg: 4,
            true_neg: 200,
        },
    }
}

/// A minimal but complete experiment report: one evaluated config that is
/// also the winner, with test metrics attached and full provenance.
pub fn report_fixture(
    model: &str,
    methodology: &str,
    mode: &str,
    f1: f64,
    use_scaler: bool,
) -> ExperimentReport {
    let spec = PipelineSpec {
        use_scaler,
        smote: Some(SmoteConfig::default()),
        svc: SvcHyperparams {
            c: 10.0,
            gamma: GammaSpec::Value(0.001),
            ..SvcHyperparams::default()
        },
    };
    ExperimentReport {
        best_params: spec.clone(),
        configs: vec![spec],
        cv_scores: vec![vec![f1]],
        best_index: 0,
        best_cv_mean: f1,
        scoring: Scoring::MacroF1,
        test_metrics: Some(metric_set(f1, f1, f1)),
        provenance: Provenance {
            corpus_hash: "fixture".into(),
            seed: 0,
            mode: mode.into(),
            methodology: methodology.into(),
            model: model.into(),
        },
    }
}

pub fn write_report(path: &Path, report: &ExperimentReport) {
    let json = serde_json::to_string_pretty(report).expect("serializing fixture report");
    fs::write(path, json + "\n").expect("writing fixture report");
}
