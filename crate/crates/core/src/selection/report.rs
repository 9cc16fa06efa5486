//! Report aggregation and rendering: grouped mean/max macro-F1 tables and
//! the per-experiment binary-classification results table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ExperimentReport;

/// Row axis for [`aggregate_reports`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Model,
    Methodology,
    Mode,
}

impl std::str::FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "model" => Ok(GroupBy::Model),
            "methodology" => Ok(GroupBy::Methodology),
            "mode" => Ok(GroupBy::Mode),
            other => Err(format!(
                "unknown group key `{other}` (expected model, methodology, or mode)"
            )),
        }
    }
}

/// Cell statistic for [`aggregate_reports`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stat {
    Mean,
    Max,
}

impl Stat {
    fn apply(self, values: &[f64]) -> Option<f64> {
        if values.is_empty() {
            return None;
        }
        Some(match self {
            Stat::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Stat::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

impl std::str::FromStr for Stat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Stat::Mean),
            "max" => Ok(Stat::Max),
            other => Err(format!("unknown stat `{other}` (expected mean or max)")),
        }
    }
}

/// One aggregated row: label, per-column cells (`None` = no data), and the
/// mean of the present cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub label: String,
    pub cells: Vec<Option<f64>>,
    pub average: Option<f64>,
}

/// Grouped macro-F1 table (rows × columns of aggregated cells).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub group_by: GroupBy,
    pub stat: Stat,
    pub row_label: String,
    pub columns: Vec<String>,
    pub rows: Vec<AggregateRow>,
}

/// Methodology columns in their conventional presentation order; anything
/// unrecognized is appended in first-appearance order.
const METHODOLOGY_ORDER: [&str; 4] = [
    "baseline",
    "finetune-base",
    "pretrained",
    "pretrained-finetuned",
];

fn push_unique(list: &mut Vec<String>, value: &str) {
    if !list.iter().any(|v| v == value) {
        list.push(value.to_string());
    }
}

fn ordered_methodologies(reports: &[&ExperimentReport]) -> Vec<String> {
    let mut out: Vec<String> = METHODOLOGY_ORDER
        .iter()
        .filter(|m| reports.iter().any(|r| r.provenance.methodology == **m))
        .map(|m| m.to_string())
        .collect();
    for r in reports {
        push_unique(&mut out, &r.provenance.methodology);
    }
    out
}

fn ordered_models(reports: &[&ExperimentReport]) -> Vec<String> {
    let mut out = Vec::new();
    for r in reports {
        push_unique(&mut out, &r.provenance.model);
    }
    out
}

fn ordered_modes(reports: &[&ExperimentReport]) -> Vec<String> {
    let mut out = Vec::new();
    for r in reports {
        push_unique(&mut out, &r.provenance.mode);
    }
    // Numeric-aware sort so "10" follows "9".
    out.sort_by(|a, b| match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    });
    out
}

/// The figure a report contributes to aggregation: test macro F1 when the
/// report carries test metrics, otherwise its best CV mean.
fn report_f1(r: &ExperimentReport) -> f64 {
    r.test_metrics
        .as_ref()
        .map(|m| m.macro_avg.f1)
        .unwrap_or(r.best_cv_mean)
}

/// Group reports by `group_by` and emit one aggregated macro-F1 cell per
/// (row, column):
///
/// - `Model` rows × methodology columns,
/// - `Methodology` rows × model columns,
/// - `Mode` rows × model columns followed by methodology columns (each
///   column family aggregates across the other).
///
/// Row averages cover only the cells that have data.
pub fn aggregate_reports(
    reports: &[ExperimentReport],
    group_by: GroupBy,
    stat: Stat,
) -> Result<AggregateTable> {
    if reports.is_empty() {
        return Err(Error::InvalidParameter(
            "aggregate_reports needs at least one report".into(),
        ));
    }
    let refs: Vec<&ExperimentReport> = reports.iter().collect();
    let (row_label, row_keys, column_specs): (&str, Vec<String>, Vec<(ColumnKey, String)>) =
        match group_by {
            GroupBy::Model => (
                "Transformer",
                ordered_models(&refs),
                ordered_methodologies(&refs)
                    .into_iter()
                    .map(|m| (ColumnKey::Methodology, m))
                    .collect(),
            ),
            GroupBy::Methodology => (
                "Methodology",
                ordered_methodologies(&refs),
                ordered_models(&refs)
                    .into_iter()
                    .map(|m| (ColumnKey::Model, m))
                    .collect(),
            ),
            GroupBy::Mode => (
                "Mode",
                ordered_modes(&refs),
                ordered_models(&refs)
                    .into_iter()
                    .map(|m| (ColumnKey::Model, m))
                    .chain(
                        ordered_methodologies(&refs)
                            .into_iter()
                            .map(|m| (ColumnKey::Methodology, m)),
                    )
                    .collect(),
            ),
        };

    fn row_key(r: &ExperimentReport, group_by: GroupBy) -> &str {
        match group_by {
            GroupBy::Model => &r.provenance.model,
            GroupBy::Methodology => &r.provenance.methodology,
            GroupBy::Mode => &r.provenance.mode,
        }
    }
    fn column_key(r: &ExperimentReport, kind: ColumnKey) -> &str {
        match kind {
            ColumnKey::Model => &r.provenance.model,
            ColumnKey::Methodology => &r.provenance.methodology,
        }
    }

    let mut rows = Vec::with_capacity(row_keys.len());
    for key in &row_keys {
        let mut cells = Vec::with_capacity(column_specs.len());
        for (kind, col) in &column_specs {
            let values: Vec<f64> = refs
                .iter()
                .filter(|r| row_key(r, group_by) == key && column_key(r, *kind) == col)
                .map(|r| report_f1(r))
                .collect();
            cells.push(stat.apply(&values));
        }
        let present: Vec<f64> = cells.iter().flatten().copied().collect();
        rows.push(AggregateRow {
            label: key.clone(),
            average: Stat::Mean.apply(&present),
            cells,
        });
    }

    Ok(AggregateTable {
        group_by,
        stat,
        row_label: row_label.to_string(),
        columns: column_specs.into_iter().map(|(_, name)| name).collect(),
        rows,
    })
}

#[derive(Debug, Clone, Copy)]
enum ColumnKey {
    Model,
    Methodology,
}

/// Render a metric to at most three decimals, trimming trailing zeros but
/// keeping one decimal place ("0.92", "0.894", "1.0").
pub(crate) fn fmt_metric(v: f64) -> String {
    let mut s = format!("{v:.3}");
    while s.ends_with('0') && !s.ends_with(".0") {
        s.pop();
    }
    s
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(fmt_metric).unwrap_or_else(|| "-".to_string())
}

impl AggregateTable {
    /// Mode tables mirror the paper layout without average/stat columns.
    fn with_average(&self) -> bool {
        !matches!(self.group_by, GroupBy::Mode)
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec![self.row_label.clone()];
        h.extend(self.columns.iter().cloned());
        if self.with_average() {
            h.push("Av.".to_string());
            h.push("Stat.".to_string());
        }
        h
    }

    fn body(&self) -> Vec<Vec<String>> {
        let stat = match self.stat {
            Stat::Mean => "mean",
            Stat::Max => "max",
        };
        self.rows
            .iter()
            .map(|row| {
                let mut cells = vec![row.label.clone()];
                cells.extend(row.cells.iter().map(|&c| fmt_cell(c)));
                if self.with_average() {
                    cells.push(fmt_cell(row.average));
                    cells.push(stat.to_string());
                }
                cells
            })
            .collect()
    }

    /// Aligned fixed-width text table.
    pub fn render_text(&self) -> String {
        render_aligned(&self.header(), &self.body())
    }

    /// CSV with the same cells as [`render_text`].
    pub fn render_csv(&self) -> String {
        render_csv_rows(&self.header(), &self.body())
    }
}

fn render_aligned(header: &[String], body: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for row in body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let write_row = |cells: &[String], out: &mut String| {
        let line: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    };
    write_row(header, &mut out);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for row in body {
        write_row(row, &mut out);
    }
    out
}

fn render_csv_rows(header: &[String], body: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in body {
        w.write_record(row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

/// Render per-experiment test results in the conventional binary-results
/// layout: Transformer model, Methodology, (c,gamma)[model], P, R, F1.
///
/// The `(c,gamma)[model]` cell encodes the selected hyperparameters plus a
/// pipeline tag: `SS` when the scaler was on, `S` when off, followed by the
/// embedding mode (e.g. `(10,0.001) [SS-2]`). Macro P/R/F1 come from the
/// attached test metrics; reports without test metrics are rejected.
pub fn render_binary_table(reports: &[ExperimentReport], csv: bool) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::InvalidParameter(
            "render_binary_table needs at least one report".into(),
        ));
    }
    let header: Vec<String> = [
        "Transformer model",
        "Methodology",
        "(c,gamma)[model]",
        "P",
        "R",
        "F1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut body = Vec::with_capacity(reports.len());
    for r in reports {
        let m = r.test_metrics.as_ref().ok_or_else(|| {
            Error::InvalidParameter(format!(
                "report for model `{}` has no test metrics attached",
                r.provenance.model
            ))
        })?;
        let pipeline = if r.best_params.use_scaler { "SS" } else { "S" };
        body.push(vec![
            r.provenance.model.clone(),
            r.provenance.methodology.clone(),
            format!(
                "({},{}) [{}-{}]",
                r.best_params.svc.c, r.best_params.svc.gamma, pipeline, r.provenance.mode
            ),
            fmt_metric(m.macro_avg.precision),
            fmt_metric(m.macro_avg.recall),
            fmt_metric(m.macro_avg.f1),
        ]);
    }
    Ok(if csv {
        render_csv_rows(&header, &body)
    } else {
        render_aligned(&header, &body)
    })
}
