//! Binary classification metrics: per-class and macro/micro P/R/F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Precision/recall/F1 triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassMetrics {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> ClassMetrics {
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics {
            precision,
            recall,
            f1,
        }
    }
}

/// Confusion counts from the positive (label 1) perspective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    #[serde(rename = "tp")]
    pub true_pos: usize,
    #[serde(rename = "fp")]
    pub false_pos: usize,
    #[serde(rename = "fn")]
    pub false_neg: usize,
    #[serde(rename = "tn")]
    pub true_neg: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

/// Full metric bundle for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    /// Metrics for class 0 and class 1, in that order.
    pub per_class: [ClassMetrics; 2],
    /// Unweighted mean over the two classes.
    #[serde(rename = "macro")]
    pub macro_avg: ClassMetrics,
    /// Pooled counts over both classes (equals accuracy for binary
    /// single-label problems).
    pub micro: ClassMetrics,
    pub confusion: Confusion,
}

impl MetricSet {
    /// Accuracy = (tp + tn) / n.
    pub fn accuracy(&self) -> f64 {
        (self.confusion.true_pos + self.confusion.true_neg) as f64 / self.confusion.total() as f64
    }
}

/// Compute per-class, macro, and micro metrics for binary labels.
pub fn compute_metrics(y_true: &[u8], y_pred: &[u8]) -> Result<MetricSet> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: y_pred.len(),
            context: "y_pred vs y_true".into(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::InvalidParameter("compute_metrics on empty input".into()));
    }
    if let Some(i) = y_true.iter().chain(y_pred).position(|&l| l > 1) {
        return Err(Error::InvalidParameter(format!(
            "labels must be 0 or 1 (offending entry at position {i})"
        )));
    }

    let mut confusion = Confusion {
        true_pos: 0,
        false_pos: 0,
        false_neg: 0,
        true_neg: 0,
    };
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (1, 1) => confusion.true_pos += 1,
            (0, 1) => confusion.false_pos += 1,
            (1, 0) => confusion.false_neg += 1,
            _ => confusion.true_neg += 1,
        }
    }

    // Class 1 uses the confusion counts directly; class 0 swaps roles.
    let class1 = ClassMetrics::from_counts(confusion.true_pos, confusion.false_pos, confusion.false_neg);
    let class0 = ClassMetrics::from_counts(confusion.true_neg, confusion.false_neg, confusion.false_pos);

    let macro_avg = ClassMetrics {
        precision: 0.5 * (class0.precision + class1.precision),
        recall: 0.5 * (class0.recall + class1.recall),
        f1: 0.5 * (class0.f1 + class1.f1),
    };
    // Pooled over both classes every correct decision is a true positive and
    // every error counts once as a false positive and once as a false
    // negative, so precision, recall, and F1 all equal accuracy. Computing
    // one quotient keeps that identity exact; routing F1 through
    // 2pr/(p + r) would reintroduce a rounding step (1/5 != 2*(1/5)^2/(2/5)
    // in f64, for example).
    let pooled_tp = confusion.true_pos + confusion.true_neg;
    let acc = pooled_tp as f64 / confusion.total() as f64;
    let micro = ClassMetrics {
        precision: acc,
        recall: acc,
        f1: acc,
    };

    Ok(MetricSet {
        per_class: [class0, class1],
        macro_avg,
        micro,
        confusion,
    })
}
