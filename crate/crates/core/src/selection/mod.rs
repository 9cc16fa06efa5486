//! Model selection: stratified k-fold CV, leakage-safe pipeline composition
//! (SMOTE → scaler → SVC strictly inside the training side of each fold),
//! parallel grid search, metrics, and report aggregation.

mod metrics;
mod report;

pub use metrics::{compute_metrics, ClassMetrics, Confusion, MetricSet};
pub use report::{aggregate_reports, render_binary_table, AggregateTable, GroupBy, Stat};

use std::collections::HashSet;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::{smote, SampleSet, SmoteConfig};
use crate::seed::derive_seed;
use crate::svc::{resolve_gamma, train_svc, GammaSpec, SvcHyperparams, SvcModel};

/// One full pipeline configuration: optional SMOTE, optional scaler, SVC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub use_scaler: bool,
    /// `None` disables oversampling.
    pub smote: Option<SmoteConfig>,
    pub svc: SvcHyperparams,
}

/// Grid-search space and CV settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub c_values: Vec<f64>,
    pub gamma_values: Vec<GammaSpec>,
    pub scaler_options: Vec<bool>,
    pub folds: usize,
    pub scoring: Scoring,
    /// SMOTE applied inside every fold (and the refit); `None` disables it.
    pub smote: Option<SmoteConfig>,
    pub seed: u64,
}

impl Default for GridSpec {
    /// The inferred default grid: C ∈ {0.1,1,10,100} × gamma ∈
    /// {0.001,0.01,0.1,auto} × scaler ∈ {off,on}, 5 folds, macro-F1 scoring.
    fn default() -> GridSpec {
        GridSpec {
            c_values: vec![0.1, 1.0, 10.0, 100.0],
            gamma_values: vec![
                GammaSpec::Value(0.001),
                GammaSpec::Value(0.01),
                GammaSpec::Value(0.1),
                GammaSpec::Auto,
            ],
            scaler_options: vec![false, true],
            folds: 5,
            scoring: Scoring::MacroF1,
            smote: Some(SmoteConfig::default()),
            seed: 0,
        }
    }
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        if self.c_values.is_empty() || self.gamma_values.is_empty() || self.scaler_options.is_empty()
        {
            return Err(Error::InvalidParameter(
                "grid axes must all be non-empty".into(),
            ));
        }
        if self.folds < 2 {
            return Err(Error::InvalidParameter(format!(
                "folds must be ≥ 2, got {}",
                self.folds
            )));
        }
        Ok(())
    }
}

/// CV selection metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    #[default]
    MacroF1,
    MicroF1,
}

impl Scoring {
    pub fn extract(self, m: &MetricSet) -> f64 {
        match self {
            Scoring::MacroF1 => m.macro_avg.f1,
            Scoring::MicroF1 => m.micro.f1,
        }
    }
}

impl std::str::FromStr for Scoring {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "macro_f1" => Ok(Scoring::MacroF1),
            "micro_f1" => Ok(Scoring::MicroF1),
            other => Err(format!("unknown scoring `{other}` (expected macro_f1 or micro_f1)")),
        }
    }
}

/// Which fitting stage consumed a set of rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FitStage {
    Smote,
    Scaler,
    Svc,
}

/// One recorded fit-stage data access.
#[derive(Debug, Clone)]
pub struct FitEvent {
    pub stage: FitStage,
    /// Grid config index, or `None` for the final refit.
    pub config: Option<usize>,
    /// Fold index, or `None` for the final refit.
    pub fold: Option<usize>,
    /// Original row indices that entered the stage.
    pub row_ids: Vec<usize>,
}

/// Thread-safe log of every row id entering a fit-stage operation; used to
/// audit leakage freedom.
#[derive(Debug, Default)]
pub struct AuditLog {
    events: Mutex<Vec<FitEvent>>,
}

impl AuditLog {
    pub fn new() -> AuditLog {
        AuditLog::default()
    }

    pub fn record(&self, stage: FitStage, config: Option<usize>, fold: Option<usize>, row_ids: &[usize]) {
        self.events.lock().unwrap().push(FitEvent {
            stage,
            config,
            fold,
            row_ids: row_ids.to_vec(),
        });
    }

    pub fn events(&self) -> Vec<FitEvent> {
        self.events.lock().unwrap().clone()
    }

    /// All distinct row ids that ever entered any fit stage.
    pub fn touched_rows(&self) -> HashSet<usize> {
        self.events
            .lock()
            .unwrap()
            .iter()
            .flat_map(|e| e.row_ids.iter().copied())
            .collect()
    }
}

/// Deterministic stratified k-fold partition of `0..labels.len()`.
///
/// Each class is shuffled independently and dealt into k contiguous chunks;
/// the first `count % k` folds receive one extra member of that class.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("k must be ≥ 2, got {k}")));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        if l > 1 {
            return Err(Error::InvalidParameter(format!(
                "label at row {i} is {l}, expected 0 or 1"
            )));
        }
        by_class[l as usize].push(i);
    }
    for (label, members) in by_class.iter().enumerate() {
        if members.len() < k {
            return Err(Error::ClassTooSmall {
                class: label as u8,
                count: members.len(),
                needed: k,
                op: "stratified_kfold",
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    // Folds receiving a class's remainder rotate across classes, keeping
    // total fold sizes within one of each other.
    let mut extra_start = 0usize;
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
        let base = members.len() / k;
        let extra = members.len() % k;
        let mut cursor = 0;
        for offset in 0..k {
            let f = (extra_start + offset) % k;
            let take = base + usize::from(offset < extra);
            folds[f].extend_from_slice(&members[cursor..cursor + take]);
            cursor += take;
        }
        extra_start = (extra_start + extra) % k;
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Train the pipeline on `train_idx` rows and score it on `valid_idx` rows.
///
/// The `seed` drives all stage randomness (a SMOTE draw and the SVC
/// working-set heuristic) via labeled derivation, so fold evaluations are
/// independent and reproducible; `spec.smote.seed` is ignored here.
pub fn evaluate_fold(
    train_idx: &[usize],
    valid_idx: &[usize],
    vectors: &[Vec<f64>],
    labels: &[u8],
    spec: &PipelineSpec,
    seed: u64,
) -> Result<MetricSet> {
    evaluate_fold_audited(train_idx, valid_idx, vectors, labels, spec, seed, None, None, None)
        .map(|(m, _)| m)
}

/// [`evaluate_fold`] with optional audit instrumentation; returns the
/// trained model as well (used by the refit path).
#[allow(clippy::too_many_arguments)]
pub fn evaluate_fold_audited(
    train_idx: &[usize],
    valid_idx: &[usize],
    vectors: &[Vec<f64>],
    labels: &[u8],
    spec: &PipelineSpec,
    seed: u64,
    audit: Option<&AuditLog>,
    config: Option<usize>,
    fold: Option<usize>,
) -> Result<(MetricSet, SvcModel)> {
    if train_idx.is_empty() || valid_idx.is_empty() {
        return Err(Error::InvalidParameter(
            "evaluate_fold needs non-empty train and validation index sets".into(),
        ));
    }
    let train_set: HashSet<usize> = train_idx.iter().copied().collect();
    if valid_idx.iter().any(|i| train_set.contains(i)) {
        return Err(Error::InvalidParameter(
            "train and validation index sets overlap".into(),
        ));
    }
    if let Some(&bad) = train_idx.iter().chain(valid_idx).find(|&&i| i >= vectors.len()) {
        return Err(Error::InvalidParameter(format!(
            "row index {bad} out of range for {} rows",
            vectors.len()
        )));
    }

    let train = SampleSet::from_real(
        train_idx.iter().map(|&i| vectors[i].clone()).collect(),
        train_idx.iter().map(|&i| labels[i]).collect(),
    )?;

    let resampled = match &spec.smote {
        Some(cfg) => {
            if let Some(log) = audit {
                log.record(FitStage::Smote, config, fold, train_idx);
            }
            let cfg = SmoteConfig {
                seed: derive_seed(seed, "smote"),
                ..*cfg
            };
            smote(&train, &cfg)?
        }
        None => train,
    };
    if spec.use_scaler {
        if let Some(log) = audit {
            log.record(FitStage::Scaler, config, fold, train_idx);
        }
    }
    if let Some(log) = audit {
        log.record(FitStage::Svc, config, fold, train_idx);
    }

    let model = train_svc(&resampled, &spec.svc, spec.use_scaler, derive_seed(seed, "svc"))?;

    let valid_vectors: Vec<Vec<f64>> = valid_idx.iter().map(|&i| vectors[i].clone()).collect();
    let y_true: Vec<u8> = valid_idx.iter().map(|&i| labels[i]).collect();
    let y_pred = model.predict_batch(&valid_vectors)?;
    Ok((compute_metrics(&y_true, &y_pred)?, model))
}

/// Experiment provenance carried inside every report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub corpus_hash: String,
    pub seed: u64,
    /// Embedding mode label, e.g. "2".
    pub mode: String,
    pub methodology: String,
    /// Encoder/model label the embeddings came from.
    pub model: String,
}

/// Grid-search outcome: per-config CV scores, the selected config, and test
/// metrics once attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub best_params: PipelineSpec,
    /// All evaluated configs, in canonical enumeration order.
    pub configs: Vec<PipelineSpec>,
    /// `cv_scores[config][fold]`, aligned with `configs`.
    pub cv_scores: Vec<Vec<f64>>,
    pub best_index: usize,
    pub best_cv_mean: f64,
    pub scoring: Scoring,
    pub test_metrics: Option<MetricSet>,
    pub provenance: Provenance,
}

impl ExperimentReport {
    pub fn cv_mean(&self, config: usize) -> f64 {
        let row = &self.cv_scores[config];
        row.iter().sum::<f64>() / row.len() as f64
    }
}

/// A grid search result: the report plus the refit model.
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub report: ExperimentReport,
    /// Best config refit on the full training data (fresh SMOTE draw).
    pub model: SvcModel,
}

/// Exhaustive grid search with stratified k-fold CV, followed by a refit of
/// the winning config on the full training data.
pub fn grid_search(
    vectors: &[Vec<f64>],
    labels: &[u8],
    grid: &GridSpec,
    seed: u64,
) -> Result<GridOutcome> {
    grid_search_audited(vectors, labels, grid, seed, None)
}

/// [`grid_search`] with optional leakage auditing.
pub fn grid_search_audited(
    vectors: &[Vec<f64>],
    labels: &[u8],
    grid: &GridSpec,
    seed: u64,
    audit: Option<&AuditLog>,
) -> Result<GridOutcome> {
    grid.validate()?;
    if vectors.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: vectors.len(),
            got: labels.len(),
            context: "labels vs vectors".into(),
        });
    }

    // Canonical enumeration: C, then gamma, then scaler, in the given order.
    let mut configs = Vec::new();
    for &c in &grid.c_values {
        for &gamma in &grid.gamma_values {
            for &use_scaler in &grid.scaler_options {
                configs.push(PipelineSpec {
                    use_scaler,
                    smote: grid.smote,
                    svc: SvcHyperparams {
                        c,
                        gamma,
                        ..SvcHyperparams::default()
                    },
                });
            }
        }
    }

    let folds = stratified_kfold(labels, grid.folds, derive_seed(seed, "kfold"))?;
    let all_indices: Vec<usize> = (0..labels.len()).collect();
    let fold_splits: Vec<(Vec<usize>, Vec<usize>)> = folds
        .iter()
        .map(|valid| {
            let valid_set: HashSet<usize> = valid.iter().copied().collect();
            let train: Vec<usize> = all_indices
                .iter()
                .copied()
                .filter(|i| !valid_set.contains(i))
                .collect();
            (train, valid.clone())
        })
        .collect();

    // Every (config, fold) task derives its seed from the config CONTENT,
    // not its position, so neither axis enumeration order nor thread
    // scheduling can affect results.
    let config_label = |spec: &PipelineSpec| -> String {
        format!(
            "c={}/gamma={}/scaler={}",
            spec.svc.c, spec.svc.gamma, spec.use_scaler
        )
    };
    let tasks: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|ci| (0..folds.len()).map(move |fi| (ci, fi)))
        .collect();
    let results: Vec<Result<f64>> = tasks
        .par_iter()
        .map(|&(ci, fi)| {
            let (train, valid) = &fold_splits[fi];
            let task_seed = derive_seed(seed, &format!("{}/fold{fi}", config_label(&configs[ci])));
            evaluate_fold_audited(
                train,
                valid,
                vectors,
                labels,
                &configs[ci],
                task_seed,
                audit,
                Some(ci),
                Some(fi),
            )
            .map(|(m, _)| grid.scoring.extract(&m))
        })
        .collect();

    let mut cv_scores = vec![vec![f64::NAN; folds.len()]; configs.len()];
    let mut failures: Vec<(usize, String)> = Vec::new();
    for (&(ci, fi), res) in tasks.iter().zip(results) {
        match res {
            Ok(score) => cv_scores[ci][fi] = score,
            Err(e) => failures.push((ci, format!("config {ci} fold {fi}: {e}"))),
        }
    }
    let failed_configs: HashSet<usize> = failures.iter().map(|(ci, _)| *ci).collect();
    if failed_configs.len() == configs.len() {
        let mut detail: Vec<String> = failures.into_iter().map(|(_, msg)| msg).collect();
        detail.truncate(configs.len());
        return Err(Error::Other(format!(
            "every grid config failed:\n  {}",
            detail.join("\n  ")
        )));
    }
    for (_, msg) in &failures {
        log::warn!("grid_search: skipping failed evaluation: {msg}");
    }

    // Selection: max mean CV score; ties prefer smaller C, then smaller
    // resolved gamma, then no scaler. A final key on the gamma spelling
    // ("0.5" vs "auto" resolving to the same value) keeps the winner unique
    // regardless of enumeration order.
    let tie_key = |ci: usize| -> (f64, f64, bool, String) {
        let spec = &configs[ci];
        let gamma = resolve_gamma(spec.svc.gamma, vectors).unwrap_or(f64::MAX);
        (spec.svc.c, gamma, spec.use_scaler, spec.svc.gamma.to_string())
    };
    let mean_of = |ci: usize| -> f64 {
        let row = &cv_scores[ci];
        row.iter().sum::<f64>() / row.len() as f64
    };
    let mut best_index = None;
    for ci in 0..configs.len() {
        if failed_configs.contains(&ci) {
            continue;
        }
        best_index = match best_index {
            None => Some(ci),
            Some(bi) => {
                let (m, b) = (mean_of(ci), mean_of(bi));
                let better = m > b
                    || (m == b && {
                        tie_key(ci) < tie_key(bi)
                    });
                Some(if better { ci } else { bi })
            }
        };
    }
    let best_index = best_index.expect("at least one config succeeded");
    let best_params = configs[best_index].clone();

    // Refit the winner on the full training data with a fresh SMOTE draw.
    let full = SampleSet::from_real(vectors.to_vec(), labels.to_vec())?;
    let resampled = match &best_params.smote {
        Some(cfg) => {
            if let Some(log) = audit {
                log.record(FitStage::Smote, None, None, &all_indices);
            }
            let cfg = SmoteConfig {
                seed: derive_seed(seed, "refit/smote"),
                ..*cfg
            };
            smote(&full, &cfg)?
        }
        None => full,
    };
    if best_params.use_scaler {
        if let Some(log) = audit {
            log.record(FitStage::Scaler, None, None, &all_indices);
        }
    }
    if let Some(log) = audit {
        log.record(FitStage::Svc, None, None, &all_indices);
    }
    let model = train_svc(
        &resampled,
        &best_params.svc,
        best_params.use_scaler,
        derive_seed(seed, "refit/svc"),
    )?;

    let best_cv_mean = mean_of(best_index);
    Ok(GridOutcome {
        report: ExperimentReport {
            best_params,
            configs,
            cv_scores,
            best_index,
            best_cv_mean,
            scoring: grid.scoring,
            test_metrics: None,
            provenance: Provenance::default(),
        },
        model,
    })
}

/// Score a refit model on held-out data and attach the result to the report.
pub fn attach_test_metrics(
    report: &mut ExperimentReport,
    model: &SvcModel,
    test_vectors: &[Vec<f64>],
    test_labels: &[u8],
) -> Result<()> {
    let y_pred = model.predict_batch(test_vectors)?;
    report.test_metrics = Some(compute_metrics(test_labels, &y_pred)?);
    Ok(())
}
