//! Shared oracles for integration tests: an independent projected-gradient
//! QP solver for the SVM dual, exact KKT checking, and small deterministic
//! problem generators. Nothing here calls into the SMO code paths under test
//! except through public model accessors.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use utos_core::rbf_kernel;
use utos_core::SampleSet;

/// Result of the brute-force dual solve.
pub struct QpSolution {
    pub alphas: Vec<f64>,
    pub objective: f64,
}

/// Maximize `Σα − ½ αᵀQα` over `0 ≤ α ≤ C`, `yᵀα = 0`, with
/// `Q_ij = y_i y_j K(x_i, x_j)`, by accelerated projected gradient with
/// function restarts. Intended for small instances (n ≤ ~100).
pub fn qp_solve_dual(vectors: &[Vec<f64>], y: &[f64], c: f64, gamma: f64) -> QpSolution {
    let n = vectors.len();
    let mut q = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            q[i][j] = y[i] * y[j] * rbf_kernel(&vectors[i], &vectors[j], gamma).unwrap();
        }
    }
    // Lipschitz bound for the gradient: max row sum dominates λ_max(Q).
    let lip = q
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(1e-12);
    let step = 1.0 / lip;

    let minus_grad = |alpha: &[f64], q: &[Vec<f64>]| -> Vec<f64> {
        // ∇ of the NEGATED (minimized) objective: Qα − 1.
        (0..alpha.len())
            .map(|i| q[i].iter().zip(alpha).map(|(qij, a)| qij * a).sum::<f64>() - 1.0)
            .collect()
    };
    let objective = |alpha: &[f64], q: &[Vec<f64>]| -> f64 {
        let mut quad = 0.0;
        for i in 0..alpha.len() {
            for j in 0..alpha.len() {
                quad += alpha[i] * alpha[j] * q[i][j];
            }
        }
        alpha.iter().sum::<f64>() - 0.5 * quad
    };

    let mut alpha = vec![0.0; n];
    let mut momentum = alpha.clone();
    let mut t = 1.0f64;
    let mut best = objective(&alpha, &q);
    let mut stale = 0usize;
    for _ in 0..400_000 {
        let grad = minus_grad(&momentum, &q);
        let trial: Vec<f64> = momentum
            .iter()
            .zip(&grad)
            .map(|(z, g)| z - step * g)
            .collect();
        let next = project_box_hyperplane(&trial, y, c);
        let obj = objective(&next, &q);
        if obj < best {
            // Restart the momentum sequence from the best iterate.
            momentum = alpha.clone();
            t = 1.0;
            stale += 1;
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            momentum = next
                .iter()
                .zip(&alpha)
                .map(|(nw, old)| nw + beta * (nw - old))
                .collect();
            t = t_next;
            if obj - best <= 1e-15 * (1.0 + best.abs()) {
                stale += 1;
            } else {
                stale = 0;
            }
            best = obj;
            alpha = next;
        }
        if stale > 2_000 {
            break;
        }
    }
    QpSolution {
        objective: objective(&alpha, &q),
        alphas: alpha,
    }
}

/// Euclidean projection onto `{0 ≤ α ≤ C, yᵀα = 0}` via bisection on the
/// hyperplane multiplier: `α_i(λ) = clip(v_i − λ y_i, 0, C)` is monotone in λ.
fn project_box_hyperplane(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let residual = |lambda: f64| -> f64 {
        v.iter()
            .zip(y)
            .map(|(vi, yi)| yi * (vi - lambda * yi).clamp(0.0, c))
            .sum()
    };
    let bound = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    v.iter()
        .zip(y)
        .map(|(vi, yi)| (vi - lambda * yi).clamp(0.0, c))
        .collect()
}

/// Exact max KKT violation of a dual solution, recomputing every decision
/// value from scratch (no reliance on the solver's caches).
pub fn max_kkt_violation(
    vectors: &[Vec<f64>],
    y: &[f64],
    alphas: &[f64],
    bias: f64,
    c: f64,
    gamma: f64,
) -> f64 {
    let n = vectors.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut f = bias;
        for j in 0..n {
            if alphas[j] > 0.0 {
                f += alphas[j] * y[j] * rbf_kernel(&vectors[j], &vectors[i], gamma).unwrap();
            }
        }
        let margin = y[i] * f - 1.0;
        let bound_slack = 1e-9 * c.max(1.0);
        let viol = if alphas[i] <= bound_slack {
            (-margin).max(0.0)
        } else if alphas[i] >= c - bound_slack {
            margin.max(0.0)
        } else {
            margin.abs()
        };
        worst = worst.max(viol);
    }
    worst
}

/// Deterministic random binary classification instance: two loose Gaussian
/// clouds, n points, d dims. Guaranteed to contain both classes.
pub fn random_instance(n: usize, d: usize, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let center = if label == 1 { 1.0 } else { -1.0 };
        let v: Vec<f64> = (0..d)
            .map(|_| center + rng.gen_range(-1.5..1.5))
            .collect();
        vectors.push(v);
        labels.push(label);
    }
    SampleSet::from_real(vectors, labels).unwrap()
}

/// Signed labels {−1,+1} from binary {0,1}.
pub fn signed_labels(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect()
}
