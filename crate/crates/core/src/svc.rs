//! Binary soft-margin SVM with an RBF kernel, trained by sequential minimal
//! optimization (Platt-style working-set heuristics), plus optional standard
//! scaling.
//!
//! The decision function is `f(x) = Σᵢ αᵢyᵢ K(xᵢ,x) + b` with
//! `K(x,z) = exp(−γ‖x−z‖²)`. Training keeps a full error cache and an LRU
//! cache of kernel rows; the random parts of the working-set heuristic are
//! seeded so fits are reproducible.

use std::collections::HashMap;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::SampleSet;

/// RBF kernel value `exp(−gamma · ‖x − z‖²)`.
pub fn rbf_kernel(x: &[f64], z: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: z.len(),
            context: "rbf_kernel operands".into(),
        });
    }
    let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-gamma * d2).exp())
}

/// Gamma as given by the user: a number, or a data-dependent rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaSpec {
    Value(f64),
    /// `1 / d`.
    Auto,
    /// `1 / (d · var)` with `var` the population variance over all entries.
    Scale,
}

impl std::fmt::Display for GammaSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GammaSpec::Value(v) => write!(f, "{v}"),
            GammaSpec::Auto => f.write_str("auto"),
            GammaSpec::Scale => f.write_str("scale"),
        }
    }
}

impl std::str::FromStr for GammaSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "auto" => Ok(GammaSpec::Auto),
            "scale" => Ok(GammaSpec::Scale),
            other => other
                .parse::<f64>()
                .map(GammaSpec::Value)
                .map_err(|_| format!("gamma must be a number, `auto`, or `scale`; got `{other}`")),
        }
    }
}

// In JSON a gamma is either a number or one of the two rule names.
impl Serialize for GammaSpec {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            GammaSpec::Value(v) => ser.serialize_f64(*v),
            GammaSpec::Auto => ser.serialize_str("auto"),
            GammaSpec::Scale => ser.serialize_str("scale"),
        }
    }
}

impl<'de> Deserialize<'de> for GammaSpec {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Name(String),
        }
        match Repr::deserialize(de)? {
            Repr::Num(v) => Ok(GammaSpec::Value(v)),
            Repr::Name(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Resolve a gamma spec against training features.
pub fn resolve_gamma(spec: GammaSpec, data: &[Vec<f64>]) -> Result<f64> {
    let d = data.first().map_or(0, |v| v.len());
    match spec {
        GammaSpec::Value(v) => {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "gamma must be positive, got {v}"
                )));
            }
            Ok(v)
        }
        GammaSpec::Auto => {
            if d == 0 {
                return Err(Error::InvalidParameter(
                    "gamma `auto` needs at least one feature".into(),
                ));
            }
            Ok(1.0 / d as f64)
        }
        GammaSpec::Scale => {
            if d == 0 || data.is_empty() {
                return Err(Error::InvalidParameter(
                    "gamma `scale` needs non-empty data".into(),
                ));
            }
            let count = (data.len() * d) as f64;
            let mean: f64 = data.iter().flatten().sum::<f64>() / count;
            let var: f64 = data
                .iter()
                .flatten()
                .map(|x| (x - mean) * (x - mean))
                .sum::<f64>()
                / count;
            if var == 0.0 {
                return Err(Error::InvalidParameter(
                    "gamma `scale` undefined: data has zero variance".into(),
                ));
            }
            Ok(1.0 / (d as f64 * var))
        }
    }
}

/// Per-dimension standardization statistics (population std; constant
/// dimensions get std 1 so they map to zero instead of dividing by zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Fit standardization statistics on training data.
pub fn fit_scaler(data: &[Vec<f64>]) -> Result<ScalerStats> {
    if data.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "fit_scaler needs ≥ 2 rows, got {}",
            data.len()
        )));
    }
    let d = data[0].len();
    let n = data.len() as f64;
    let mut mean = vec![0.0; d];
    for row in data {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut std = vec![0.0; d];
    for row in data {
        for ((s, x), m) in std.iter_mut().zip(row).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    for s in &mut std {
        *s = (*s / n).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    Ok(ScalerStats { mean, std })
}

/// Standardize one row.
pub fn scale_row(stats: &ScalerStats, row: &[f64]) -> Vec<f64> {
    row.iter()
        .zip(&stats.mean)
        .zip(&stats.std)
        .map(|((x, m), s)| (x - m) / s)
        .collect()
}

/// Standardize a matrix.
pub fn apply_scaler(stats: &ScalerStats, data: &[Vec<f64>]) -> Vec<Vec<f64>> {
    data.iter().map(|row| scale_row(stats, row)).collect()
}

/// Undo standardization (exact inverse up to rounding).
pub fn inverse_scaler(stats: &ScalerStats, data: &[Vec<f64>]) -> Vec<Vec<f64>> {
    data.iter()
        .map(|row| {
            row.iter()
                .zip(&stats.mean)
                .zip(&stats.std)
                .map(|((x, m), s)| x * s + m)
                .collect()
        })
        .collect()
}

/// SVC hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvcHyperparams {
    pub c: f64,
    pub gamma: GammaSpec,
    /// KKT tolerance for convergence (also the minimum-progress threshold).
    pub tolerance: f64,
    /// Outer-sweep guard; practically never reached before convergence.
    pub max_sweeps: usize,
    /// Budget of actual kernel evaluations (cache misses) during training.
    pub max_kernel_evals: u64,
}

impl Default for SvcHyperparams {
    fn default() -> SvcHyperparams {
        SvcHyperparams {
            c: 1.0,
            gamma: GammaSpec::Scale,
            tolerance: 1e-3,
            max_sweeps: 10_000,
            max_kernel_evals: 10_000_000,
        }
    }
}

impl SvcHyperparams {
    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::InvalidParameter(format!("C must be positive, got {}", self.c)));
        }
        if let GammaSpec::Value(v) = self.gamma {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "gamma must be positive, got {v}"
                )));
            }
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// A trained SVC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvcModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `αᵢyᵢ` for each support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub hyperparams: SvcHyperparams,
    pub scaler: Option<ScalerStats>,
    pub resolved_gamma: f64,
}

/// A prediction: hard label plus the signed decision value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: u8,
    pub decision_value: f64,
}

impl SvcModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, |v| v.len())
    }

    /// Signed distance proxy `Σ αᵢyᵢ K(xᵢ,x) + b` (scaler applied first).
    pub fn decision_function(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
                context: "decision_function input".into(),
            });
        }
        let scaled;
        let q: &[f64] = match &self.scaler {
            Some(stats) => {
                scaled = scale_row(stats, x);
                &scaled
            }
            None => x,
        };
        let mut f = self.bias;
        for (sv, coef) in self.support_vectors.iter().zip(&self.dual_coefs) {
            f += coef * rbf_kernel(sv, q, self.resolved_gamma)?;
        }
        Ok(f)
    }

    /// Predict one sample; a decision value of exactly 0 maps to the
    /// positive class.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let decision_value = self.decision_function(x)?;
        Ok(Prediction {
            label: if decision_value >= 0.0 { 1 } else { 0 },
            decision_value,
        })
    }

    /// Predict many samples.
    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<u8>> {
        xs.iter().map(|x| Ok(self.predict(x)?.label)).collect()
    }

    /// Number of support vectors.
    pub fn n_support(&self) -> usize {
        self.dual_coefs.len()
    }

    /// Dual objective `Σαᵢ − ½ΣΣ αᵢαⱼyᵢyⱼK(xᵢ,xⱼ)` of the stored solution.
    pub fn dual_objective(&self) -> f64 {
        let alphas_sum: f64 = self.dual_coefs.iter().map(|c| c.abs()).sum();
        let mut quad = 0.0;
        for (i, (si, ci)) in self.support_vectors.iter().zip(&self.dual_coefs).enumerate() {
            for (sj, cj) in self.support_vectors[i..].iter().zip(&self.dual_coefs[i..]) {
                let k = rbf_kernel(si, sj, self.resolved_gamma).expect("stored SVs share dim");
                let term = ci * cj * k;
                quad += if std::ptr::eq(si, sj) { term } else { 2.0 * term };
            }
        }
        alphas_sum - 0.5 * quad
    }
}

/// Training diagnostics beyond the model itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoReport {
    /// Final α for every training row, in input order.
    pub alphas: Vec<f64>,
    pub dual_objective: f64,
    pub sweeps: usize,
    pub kernel_evals: u64,
    /// `Σ αᵢyᵢ` of the final solution (should be ~0).
    pub alpha_y_balance: f64,
    /// Max KKT violation per the maintained error cache.
    pub max_kkt_violation: f64,
}

/// Train an SVC; see [`train_svc_detailed`] for diagnostics.
pub fn train_svc(
    data: &SampleSet,
    hp: &SvcHyperparams,
    use_scaler: bool,
    seed: u64,
) -> Result<SvcModel> {
    train_svc_detailed(data, hp, use_scaler, seed).map(|(model, _)| model)
}

/// Train an SVC by SMO and return the model plus solver diagnostics.
///
/// When `use_scaler` is set, standardization statistics are fit on the
/// training data and both gamma resolution and the kernel operate in the
/// standardized space.
pub fn train_svc_detailed(
    data: &SampleSet,
    hp: &SvcHyperparams,
    use_scaler: bool,
    seed: u64,
) -> Result<(SvcModel, SmoReport)> {
    hp.validate()?;
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "training needs ≥ 2 samples, got {n}"
        )));
    }
    let pos = data.class_count(1);
    if pos == 0 || pos == n {
        return Err(Error::SingleClass {
            label: data.labels[0],
        });
    }

    let (scaler, features) = if use_scaler {
        let stats = fit_scaler(&data.vectors)?;
        let scaled = apply_scaler(&stats, &data.vectors);
        (Some(stats), scaled)
    } else {
        (None, data.vectors.clone())
    };
    let gamma = resolve_gamma(hp.gamma, &features)?;
    let y: Vec<f64> = data
        .labels
        .iter()
        .map(|&l| if l == 1 { 1.0 } else { -1.0 })
        .collect();

    let mut smo = Smo::new(&features, &y, hp, gamma, seed);
    let sweeps = smo.run()?;

    let sv_indices: Vec<usize> = (0..n).filter(|&i| smo.alpha[i] > SV_THRESHOLD).collect();
    let model = SvcModel {
        support_vectors: sv_indices.iter().map(|&i| features[i].clone()).collect(),
        dual_coefs: sv_indices.iter().map(|&i| smo.alpha[i] * y[i]).collect(),
        bias: smo.b,
        hyperparams: *hp,
        scaler,
        resolved_gamma: gamma,
    };
    let report = SmoReport {
        dual_objective: model.dual_objective(),
        sweeps,
        kernel_evals: smo.kernel_evals,
        alpha_y_balance: smo.alpha.iter().zip(&y).map(|(a, yi)| a * yi).sum(),
        max_kkt_violation: smo.max_kkt_violation(),
        alphas: smo.alpha,
    };
    Ok((model, report))
}

/// Alphas below this are treated as exactly zero when extracting SVs.
const SV_THRESHOLD: f64 = 1e-12;

/// Kernel-row LRU cache budget in bytes.
const CACHE_BYTES: usize = 64 << 20;

struct Smo<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    c: f64,
    gamma: f64,
    tol: f64,
    max_sweeps: usize,
    max_kernel_evals: u64,
    alpha: Vec<f64>,
    b: f64,
    /// `E[i] = f(xᵢ) − yᵢ`, maintained for every row.
    errors: Vec<f64>,
    cache: HashMap<usize, (Rc<Vec<f64>>, u64)>,
    cache_cap: usize,
    clock: u64,
    kernel_evals: u64,
    rng: ChaCha8Rng,
}

impl<'a> Smo<'a> {
    fn new(x: &'a [Vec<f64>], y: &'a [f64], hp: &SvcHyperparams, gamma: f64, seed: u64) -> Smo<'a> {
        let n = x.len();
        Smo {
            x,
            y,
            c: hp.c,
            gamma,
            tol: hp.tolerance,
            max_sweeps: hp.max_sweeps,
            max_kernel_evals: hp.max_kernel_evals,
            alpha: vec![0.0; n],
            b: 0.0,
            errors: y.iter().map(|yi| -yi).collect(),
            cache: HashMap::new(),
            cache_cap: (CACHE_BYTES / (8 * n)).max(8),
            clock: 0,
            kernel_evals: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn kernel_row(&mut self, i: usize) -> Result<Rc<Vec<f64>>> {
        self.clock += 1;
        if let Some((row, stamp)) = self.cache.get_mut(&i) {
            *stamp = self.clock;
            return Ok(Rc::clone(row));
        }
        let n = self.x.len();
        if self.kernel_evals + n as u64 > self.max_kernel_evals {
            return Err(self.budget_error());
        }
        self.kernel_evals += n as u64;
        let xi = &self.x[i];
        let row: Vec<f64> = self
            .x
            .iter()
            .map(|xj| rbf_kernel(xi, xj, self.gamma).expect("uniform dims"))
            .collect::<Vec<_>>();
        if self.cache.len() >= self.cache_cap {
            if let Some((&evict, _)) = self.cache.iter().min_by_key(|(_, (_, stamp))| *stamp) {
                self.cache.remove(&evict);
            }
        }
        let row = Rc::new(row);
        self.cache.insert(i, (Rc::clone(&row), self.clock));
        Ok(row)
    }

    fn budget_error(&self) -> Error {
        Error::NoConvergence {
            iterations: self.kernel_evals as usize,
            violations: self.count_violations(),
        }
    }

    fn count_violations(&self) -> usize {
        (0..self.x.len())
            .filter(|&i| {
                let r = self.errors[i] * self.y[i];
                (r < -self.tol && self.alpha[i] < self.c) || (r > self.tol && self.alpha[i] > 0.0)
            })
            .count()
    }

    /// Max KKT violation magnitude per the maintained error cache.
    fn max_kkt_violation(&self) -> f64 {
        (0..self.x.len())
            .map(|i| {
                let r = self.errors[i] * self.y[i];
                let a = self.alpha[i];
                if a <= SV_THRESHOLD {
                    (-r).max(0.0)
                } else if a >= self.c - SV_THRESHOLD {
                    r.max(0.0)
                } else {
                    r.abs()
                }
            })
            .fold(0.0, f64::max)
    }

    fn non_bound_indices(&self) -> Vec<usize> {
        (0..self.x.len())
            .filter(|&i| self.alpha[i] > 0.0 && self.alpha[i] < self.c)
            .collect()
    }

    fn run(&mut self) -> Result<usize> {
        let n = self.x.len();
        let mut examine_all = true;
        let mut num_changed = 1;
        let mut sweeps = 0;
        // Terminates when one full sweep over all examples changes nothing.
        while num_changed > 0 || examine_all {
            sweeps += 1;
            if sweeps > self.max_sweeps {
                return Err(Error::NoConvergence {
                    iterations: sweeps,
                    violations: self.count_violations(),
                });
            }
            num_changed = 0;
            if examine_all {
                for i in 0..n {
                    num_changed += self.examine(i)? as usize;
                }
            } else {
                for i in self.non_bound_indices() {
                    num_changed += self.examine(i)? as usize;
                }
            }
            if examine_all {
                examine_all = false;
            } else if num_changed == 0 {
                examine_all = true;
            }
        }
        self.finalize_bias();
        Ok(sweeps)
    }

    /// Recompute the bias from the converged alphas. The `(b1 + b2) / 2`
    /// estimate maintained during pair steps is only guaranteed feasible
    /// when a free vector exists at termination; with every alpha at a
    /// bound it can sit outside the interval the KKT conditions allow,
    /// leaving phantom violations on an otherwise optimal solution. Use the
    /// mean of `yᵢ − g(xᵢ)` over free vectors when any exist, otherwise the
    /// midpoint of the feasible interval implied by the bound rows.
    fn finalize_bias(&mut self) {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        let mut free_sum = 0.0;
        let mut free_count = 0usize;
        for i in 0..self.x.len() {
            // errors[i] = g(xᵢ) + b − yᵢ, so yᵢ − g(xᵢ) = b − errors[i].
            let target = self.b - self.errors[i];
            let a = self.alpha[i];
            if a > SV_THRESHOLD && a < self.c - SV_THRESHOLD {
                free_sum += target;
                free_count += 1;
            } else if (a <= SV_THRESHOLD) == (self.y[i] > 0.0) {
                // α = 0 with y = +1, or α = C with y = −1: b ≥ yᵢ − g(xᵢ).
                lo = lo.max(target);
            } else {
                hi = hi.min(target);
            }
        }
        let new_b = if free_count > 0 {
            free_sum / free_count as f64
        } else if lo.is_finite() && hi.is_finite() {
            0.5 * (lo + hi)
        } else if lo.is_finite() {
            lo
        } else if hi.is_finite() {
            hi
        } else {
            self.b
        };
        let delta = new_b - self.b;
        if delta != 0.0 {
            self.b = new_b;
            for e in &mut self.errors {
                *e += delta;
            }
        }
    }

    fn examine(&mut self, i2: usize) -> Result<bool> {
        let y2 = self.y[i2];
        let alph2 = self.alpha[i2];
        let e2 = self.errors[i2];
        let r2 = e2 * y2;
        let violates =
            (r2 < -self.tol && alph2 < self.c) || (r2 > self.tol && alph2 > 0.0);
        if !violates {
            return Ok(false);
        }

        // Heuristic 1: the non-bound example with the largest |E1 − E2|.
        let non_bound = self.non_bound_indices();
        if non_bound.len() > 1 {
            let mut best = None;
            let mut best_gap = -1.0;
            for &i1 in &non_bound {
                if i1 == i2 {
                    continue;
                }
                let gap = (self.errors[i1] - e2).abs();
                if gap > best_gap {
                    best_gap = gap;
                    best = Some(i1);
                }
            }
            if let Some(i1) = best {
                if self.take_step(i1, i2)? {
                    return Ok(true);
                }
            }
        }

        // Heuristic 2: all non-bound examples, from a random start.
        if !non_bound.is_empty() {
            let start = self.rng.gen_range(0..non_bound.len());
            for off in 0..non_bound.len() {
                let i1 = non_bound[(start + off) % non_bound.len()];
                if i1 != i2 && self.take_step(i1, i2)? {
                    return Ok(true);
                }
            }
        }

        // Heuristic 3: everything, from a random start.
        let n = self.x.len();
        let start = self.rng.gen_range(0..n);
        for off in 0..n {
            let i1 = (start + off) % n;
            if i1 != i2 && self.take_step(i1, i2)? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn take_step(&mut self, i1: usize, i2: usize) -> Result<bool> {
        debug_assert_ne!(i1, i2);
        let (y1, y2) = (self.y[i1], self.y[i2]);
        let (alph1, alph2) = (self.alpha[i1], self.alpha[i2]);
        let (e1, e2) = (self.errors[i1], self.errors[i2]);
        let s = y1 * y2;

        let (low, high) = if s < 0.0 {
            ((alph2 - alph1).max(0.0), (self.c + alph2 - alph1).min(self.c))
        } else {
            ((alph2 + alph1 - self.c).max(0.0), (alph2 + alph1).min(self.c))
        };
        if low == high {
            return Ok(false);
        }

        let row1 = self.kernel_row(i1)?;
        let row2 = self.kernel_row(i2)?;
        let (k11, k12, k22) = (row1[i1], row1[i2], row2[i2]);
        let eta = k11 + k22 - 2.0 * k12;

        let mut a2 = if eta > 0.0 {
            (alph2 + y2 * (e1 - e2) / eta).clamp(low, high)
        } else {
            // Degenerate curvature: evaluate the objective at both ends.
            let f1 = y1 * (e1 + self.b) - alph1 * k11 - s * alph2 * k12;
            let f2 = y2 * (e2 + self.b) - s * alph1 * k12 - alph2 * k22;
            let l1 = alph1 + s * (alph2 - low);
            let h1 = alph1 + s * (alph2 - high);
            let lobj = l1 * f1 + low * f2
                + 0.5 * l1 * l1 * k11
                + 0.5 * low * low * k22
                + s * low * l1 * k12;
            let hobj = h1 * f1 + high * f2
                + 0.5 * h1 * h1 * k11
                + 0.5 * high * high * k22
                + s * high * h1 * k12;
            if lobj < hobj - self.tol {
                low
            } else if lobj > hobj + self.tol {
                high
            } else {
                alph2
            }
        };
        if a2 < SV_THRESHOLD {
            a2 = 0.0;
        } else if a2 > self.c - SV_THRESHOLD {
            a2 = self.c;
        }
        if (a2 - alph2).abs() < self.tol * (a2 + alph2 + self.tol) {
            return Ok(false);
        }
        // Clipped steps land a1 exactly on a bound in exact arithmetic; snap
        // away the rounding noise so bound classification (and with it the
        // b update and the error-cache maintenance below) stays truthful.
        let mut a1 = alph1 + s * (alph2 - a2);
        if a1 < SV_THRESHOLD {
            a1 = 0.0;
        } else if a1 > self.c - SV_THRESHOLD {
            a1 = self.c;
        }

        let d1 = y1 * (a1 - alph1);
        let d2 = y2 * (a2 - alph2);
        let b1 = self.b - e1 - d1 * k11 - d2 * k12;
        let b2 = self.b - e2 - d1 * k12 - d2 * k22;
        let new_b = if a1 > 0.0 && a1 < self.c {
            b1
        } else if a2 > 0.0 && a2 < self.c {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        let delta_b = new_b - self.b;
        self.b = new_b;
        self.alpha[i1] = a1;
        self.alpha[i2] = a2;
        for k in 0..self.errors.len() {
            self.errors[k] += d1 * row1[k] + d2 * row2[k] + delta_b;
        }
        // The chosen b zeroes one error by construction; pin it exactly.
        if a1 > 0.0 && a1 < self.c {
            self.errors[i1] = 0.0;
        } else if a2 > 0.0 && a2 < self.c {
            self.errors[i2] = 0.0;
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample_set(vectors: Vec<Vec<f64>>, labels: Vec<u8>) -> SampleSet {
        SampleSet::from_real(vectors, labels).unwrap()
    }

    fn tight_hp(c: f64, gamma: f64) -> SvcHyperparams {
        SvcHyperparams {
            c,
            gamma: GammaSpec::Value(gamma),
            tolerance: 1e-5,
            ..SvcHyperparams::default()
        }
    }

    #[test]
    fn kernel_identity_and_closed_form() {
        let x = vec![0.3, -1.2, 4.5];
        assert_eq!(rbf_kernel(&x, &x, 0.7).unwrap(), 1.0);
        let k = rbf_kernel(&[0.0, 0.0], &[1.0, 0.0], 1.0).unwrap();
        assert_relative_eq!(k, (-1.0f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(k, 0.3678794412, max_relative = 1e-9);
    }

    #[test]
    fn kernel_monotone_in_gamma() {
        let x = [0.0, 0.0];
        let z = [0.5, 0.5];
        let k1 = rbf_kernel(&x, &z, 1.0).unwrap();
        let k2 = rbf_kernel(&x, &z, 2.0).unwrap();
        assert!(k2 < k1);
    }

    #[test]
    fn kernel_rejects_dim_mismatch() {
        assert!(rbf_kernel(&[0.0], &[0.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn gamma_resolution_rules() {
        let data_768: Vec<Vec<f64>> = vec![vec![0.0; 768]; 2];
        let auto = resolve_gamma(GammaSpec::Auto, &data_768).unwrap();
        assert_relative_eq!(auto, 1.0 / 768.0, max_relative = 1e-15);
        assert_relative_eq!(auto, 0.0013021, max_relative = 1e-4);

        assert_eq!(resolve_gamma(GammaSpec::Value(0.01), &data_768).unwrap(), 0.01);

        // Overall variance 4 in 2 dims → 1/(2·4).
        let data = vec![vec![0.0, 0.0], vec![4.0, 4.0]];
        assert_relative_eq!(
            resolve_gamma(GammaSpec::Scale, &data).unwrap(),
            0.125,
            max_relative = 1e-15
        );

        let flat = vec![vec![3.0, 3.0], vec![3.0, 3.0]];
        assert!(resolve_gamma(GammaSpec::Scale, &flat).is_err());
    }

    #[test]
    fn gamma_spec_round_trips_text_and_json() {
        for s in ["auto", "scale", "0.001", "10"] {
            let g: GammaSpec = s.parse().unwrap();
            let back: GammaSpec = g.to_string().parse().unwrap();
            assert_eq!(g, back);
            let json = serde_json::to_string(&g).unwrap();
            let from_json: GammaSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(g, from_json);
        }
        assert!("fast".parse::<GammaSpec>().is_err());
    }

    #[test]
    fn scaler_hand_example_and_round_trip() {
        let data = vec![vec![1.0], vec![3.0]];
        let stats = fit_scaler(&data).unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.std, vec![1.0]);
        let scaled = apply_scaler(&stats, &data);
        assert_eq!(scaled, vec![vec![-1.0], vec![1.0]]);

        let data = vec![vec![1.0, 7.0, -2.5], vec![4.0, 7.0, 0.5], vec![-3.0, 7.0, 9.0]];
        let stats = fit_scaler(&data).unwrap();
        let scaled = apply_scaler(&stats, &data);
        // Constant column maps to zeros.
        for row in &scaled {
            assert_eq!(row[1], 0.0);
        }
        // Columns standardized: mean 0, std 1 (population) where varying.
        for j in [0usize, 2] {
            let mean: f64 = scaled.iter().map(|r| r[j]).sum::<f64>() / 3.0;
            let var: f64 = scaled.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-9);
            assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
        let back = inverse_scaler(&stats, &scaled);
        for (orig, rec) in data.iter().zip(&back) {
            for (a, b) in orig.iter().zip(rec) {
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn two_symmetric_points() {
        let data = sample_set(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![1, 0]);
        let (model, report) = train_svc_detailed(&data, &tight_hp(2.0, 1.0), false, 0).unwrap();
        assert_eq!(model.n_support(), 2);
        // Equal |α| by symmetry; Σαy = 0 exactly for a single pair update.
        assert_relative_eq!(model.dual_coefs[0], -model.dual_coefs[1], max_relative = 1e-9);
        assert!(report.alpha_y_balance.abs() < 1e-12);
        // Boundary is the perpendicular bisector: decision ≈ 0 on the axis.
        for probe in [vec![0.0, 0.0], vec![0.0, 5.0], vec![0.0, -3.0]] {
            assert!(model.decision_function(&probe).unwrap().abs() < 1e-6);
        }
        assert_eq!(model.predict(&[0.9, 0.1]).unwrap().label, 1);
        assert_eq!(model.predict(&[-0.9, 0.1]).unwrap().label, 0);
    }

    fn xor_set() -> SampleSet {
        sample_set(
            vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![1, 1, 0, 0],
        )
    }

    #[test]
    fn xor_separates_with_rbf() {
        let data = xor_set();
        let model = train_svc(&data, &tight_hp(10.0, 1.0), false, 7).unwrap();
        let preds = model.predict_batch(&data.vectors).unwrap();
        assert_eq!(preds, data.labels);
    }

    #[test]
    fn non_bound_support_vectors_sit_on_margin() {
        let data = xor_set();
        let (model, report) = train_svc_detailed(&data, &tight_hp(10.0, 1.0), false, 7).unwrap();
        let mut checked = 0;
        for (i, &a) in report.alphas.iter().enumerate() {
            if a > 1e-9 && a < 10.0 - 1e-9 {
                let f = model.decision_function(&data.vectors[i]).unwrap();
                let y = if data.labels[i] == 1 { 1.0 } else { -1.0 };
                assert!((y * f - 1.0).abs() < 1e-3, "margin off: yf = {}", y * f);
                checked += 1;
            }
        }
        assert!(checked > 0, "expected at least one non-bound SV");
    }

    #[test]
    fn far_point_decision_equals_bias() {
        let data = xor_set();
        let model = train_svc(&data, &tight_hp(10.0, 1.0), false, 7).unwrap();
        let f = model.decision_function(&[1e4, 1e4]).unwrap();
        assert!((f - model.bias).abs() < 1e-12);
    }

    #[test]
    fn dual_feasibility_and_balance() {
        let data = blobs(40, 0.8, 3);
        let (model, report) = train_svc_detailed(&data, &tight_hp(1.0, 0.5), false, 5).unwrap();
        for &a in &report.alphas {
            assert!((-1e-12..=1.0 + 1e-12).contains(&a));
        }
        assert!(report.alpha_y_balance.abs() < 1e-9);
        assert!(report.max_kkt_violation <= 1e-5 * (1.0 + 1e-6));
        assert!(model.n_support() >= 1);
    }

    /// Two Gaussian-ish blobs around (±sep, ±sep), deterministic.
    fn blobs(n: usize, sep: f64, seed: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vectors = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i % 2) as u8;
            let center = if label == 1 { sep } else { -sep };
            vectors.push(vec![
                center + 0.5 * rng.gen_range(-1.0..1.0),
                center + 0.5 * rng.gen_range(-1.0..1.0),
            ]);
            labels.push(label);
        }
        sample_set(vectors, labels)
    }

    #[test]
    fn deterministic_under_seed() {
        let data = blobs(30, 0.6, 11);
        let hp = tight_hp(1.0, 1.0);
        let (m1, r1) = train_svc_detailed(&data, &hp, false, 42).unwrap();
        let (m2, r2) = train_svc_detailed(&data, &hp, false, 42).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1.alphas, r2.alphas);
    }

    #[test]
    fn permutation_invariant_predictions() {
        let data = blobs(36, 1.0, 13);
        let hp = SvcHyperparams {
            tolerance: 1e-6,
            ..tight_hp(1.0, 1.0)
        };
        let model_a = train_svc(&data, &hp, false, 1).unwrap();

        let perm: Vec<usize> = {
            let mut p: Vec<usize> = (0..data.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            use rand::seq::SliceRandom;
            p.shuffle(&mut rng);
            p
        };
        let permuted = sample_set(
            perm.iter().map(|&i| data.vectors[i].clone()).collect(),
            perm.iter().map(|&i| data.labels[i]).collect(),
        );
        let model_b = train_svc(&permuted, &hp, false, 1).unwrap();

        // The dual optimum is unique, but SMO stops at tol-approximate KKT,
        // so decision values agree loosely while hard labels agree exactly.
        let preds_a = model_a.predict_batch(&data.vectors).unwrap();
        let preds_b = model_b.predict_batch(&data.vectors).unwrap();
        assert_eq!(preds_a, preds_b);
        for probe in data.vectors.iter().take(12) {
            let fa = model_a.decision_function(probe).unwrap();
            let fb = model_b.decision_function(probe).unwrap();
            assert!((fa - fb).abs() < 1e-2, "fa={fa} fb={fb}");
        }
    }

    #[test]
    fn feature_and_gamma_rescaling_is_exact() {
        let data = blobs(24, 0.9, 21);
        let hp = tight_hp(1.0, 0.8);
        let model_a = train_svc(&data, &hp, false, 3).unwrap();

        let doubled = sample_set(
            data.vectors
                .iter()
                .map(|v| v.iter().map(|x| 2.0 * x).collect())
                .collect(),
            data.labels.clone(),
        );
        let hp_quarter = SvcHyperparams {
            gamma: GammaSpec::Value(0.8 / 4.0),
            ..hp
        };
        let model_b = train_svc(&doubled, &hp_quarter, false, 3).unwrap();

        for probe in data.vectors.iter().take(10) {
            let scaled_probe: Vec<f64> = probe.iter().map(|x| 2.0 * x).collect();
            let fa = model_a.decision_function(probe).unwrap();
            let fb = model_b.decision_function(&scaled_probe).unwrap();
            assert_eq!(fa.to_bits(), fb.to_bits(), "fa={fa} fb={fb}");
        }
    }

    #[test]
    fn scaler_inside_training() {
        // Wildly different feature scales; scaling makes the blobs round.
        let mut data = blobs(40, 1.2, 31);
        for v in &mut data.vectors {
            v[1] *= 1000.0;
        }
        let model = train_svc(&data, &tight_hp(10.0, 1.0), true, 2).unwrap();
        assert!(model.scaler.is_some());
        let preds = model.predict_batch(&data.vectors).unwrap();
        let correct = preds
            .iter()
            .zip(&data.labels)
            .filter(|(p, l)| p == l)
            .count();
        assert!(correct >= 38, "only {correct}/40 correct");
    }

    #[test]
    fn single_class_rejected() {
        let data = sample_set(vec![vec![0.0], vec![1.0]], vec![1, 1]);
        assert!(matches!(
            train_svc(&data, &SvcHyperparams::default(), false, 0),
            Err(Error::SingleClass { .. })
        ));
    }

    #[test]
    fn kernel_budget_enforced() {
        let data = blobs(20, 0.1, 41);
        let hp = SvcHyperparams {
            max_kernel_evals: 10,
            ..tight_hp(1.0, 1.0)
        };
        assert!(matches!(
            train_svc(&data, &hp, false, 0),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn predict_rejects_dim_mismatch() {
        let data = xor_set();
        let model = train_svc(&data, &tight_hp(10.0, 1.0), false, 7).unwrap();
        assert!(model.predict(&[0.0]).is_err());
    }
}
