//! Vanilla SMOTE minority oversampling.
//!
//! Synthetic rows are convex combinations of a minority point and one of its
//! k nearest minority neighbors: `x + u·(z − x)` with `u` uniform in [0,1].
//! Only the minority class is ever synthesized, and real rows pass through
//! unchanged and in order, so the caller can slice the original block back
//! out of the result.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a row came from the input data or was synthesized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthetic,
}

/// A feature matrix with binary labels and per-row provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub origin: Vec<Origin>,
}

impl SampleSet {
    /// Wrap real data, validating shape and label values.
    pub fn from_real(vectors: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<SampleSet> {
        if vectors.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: vectors.len(),
                got: labels.len(),
                context: "labels vs vectors".into(),
            });
        }
        let d = vectors.first().map_or(0, |v| v.len());
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                    context: format!("vector at row {i}"),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    context: "sample vector".into(),
                    row: i,
                });
            }
        }
        if let Some(i) = labels.iter().position(|&l| l > 1) {
            return Err(Error::InvalidParameter(format!(
                "label at row {i} is {}, expected 0 or 1",
                labels[i]
            )));
        }
        let origin = vec![Origin::Real; labels.len()];
        Ok(SampleSet {
            vectors,
            labels,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension (0 for an empty set).
    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.len())
    }

    /// Count of rows carrying the given label.
    pub fn class_count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// SMOTE parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    /// Desired minority count relative to the majority count (1.0 = full balance).
    pub target_ratio: f64,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> SmoteConfig {
        SmoteConfig {
            k_neighbors: 5,
            target_ratio: 1.0,
            seed: 0,
        }
    }
}

impl SmoteConfig {
    fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(Error::InvalidParameter("k_neighbors must be ≥ 1".into()));
        }
        if !(self.target_ratio > 0.0 && self.target_ratio <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "target_ratio must be in (0,1], got {}",
                self.target_ratio
            )));
        }
        Ok(())
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the k nearest points to `points[query_index]` (query excluded),
/// by Euclidean distance, ties broken by lower index. Brute force.
pub fn nearest_neighbors(points: &[Vec<f64>], query_index: usize, k: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "nearest_neighbors needs ≥ 2 points, got {n}"
        )));
    }
    if query_index >= n {
        return Err(Error::InvalidParameter(format!(
            "query_index {query_index} out of range for {n} points"
        )));
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidParameter(format!(
            "k must be in 1..{n}, got {k}"
        )));
    }
    let query = &points[query_index];
    let mut order: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != query_index)
        .map(|(i, p)| (squared_distance(query, p), i))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(order.into_iter().take(k).map(|(_, i)| i).collect())
}

/// The SMOTE interpolation step: `x + u·(z − x)` elementwise.
pub fn synthesize_point(x: &[f64], z: &[f64], u: f64) -> Vec<f64> {
    x.iter().zip(z).map(|(a, b)| a + u * (b - a)).collect()
}

/// Oversample the minority class with synthetic interpolated points until
/// `minority == round(target_ratio × majority)`. Real rows are returned
/// first, unchanged and in input order; synthetics are appended.
pub fn smote(data: &SampleSet, cfg: &SmoteConfig) -> Result<SampleSet> {
    cfg.validate()?;
    if data.dim() == 0 {
        return Err(Error::InvalidParameter(
            "smote requires at least one feature dimension".into(),
        ));
    }

    let pos = data.class_count(1);
    let neg = data.class_count(0);
    let (minority_label, minority_count, majority_count) = if pos <= neg {
        (1u8, pos, neg)
    } else {
        (0u8, neg, pos)
    };
    if minority_count < 2 {
        return Err(Error::ClassTooSmall {
            class: minority_label,
            count: minority_count,
            needed: 2,
            op: "smote",
        });
    }

    let target = ((cfg.target_ratio * majority_count as f64) + 0.5).floor() as usize;
    let needed = target.saturating_sub(minority_count);
    let mut out = data.clone();
    if needed == 0 {
        return Ok(out);
    }

    let mut k = cfg.k_neighbors;
    if k >= minority_count {
        k = minority_count - 1;
        log::warn!(
            "smote: k_neighbors {} ≥ minority count {}; clamping to {}",
            cfg.k_neighbors,
            minority_count,
            k
        );
    }

    let minority_rows: Vec<usize> = (0..data.len())
        .filter(|&i| data.labels[i] == minority_label)
        .collect();
    let minority_points: Vec<Vec<f64>> = minority_rows
        .iter()
        .map(|&i| data.vectors[i].clone())
        .collect();
    let neighbor_lists: Vec<Vec<usize>> = (0..minority_points.len())
        .map(|i| nearest_neighbors(&minority_points, i, k))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..needed {
        let base = rng.gen_range(0..minority_points.len());
        let neighbor = neighbor_lists[base][rng.gen_range(0..k)];
        let u: f64 = rng.gen_range(0.0..=1.0);
        out.vectors.push(synthesize_point(
            &minority_points[base],
            &minority_points[neighbor],
            u,
        ));
        out.labels.push(minority_label);
        out.origin.push(Origin::Synthetic);
    }
    Ok(out)
}
