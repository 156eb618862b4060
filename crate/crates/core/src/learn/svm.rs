//! Hinge-loss linear SVM trained by dual coordinate descent.
//!
//! Features are standardized internally (population moments; a zero spread
//! falls back to 1) and the bias enters as an augmented constant-1 feature,
//! so the bias is regularized along with the weights. The dual variables move
//! one coordinate at a time in a freshly seeded random order each epoch,
//! with the weight vector maintained incrementally. Training stops when the
//! largest projected-gradient magnitude seen in an epoch drops to `tol`.
//!
//! The returned [`Plane`] is folded back to raw feature space, so callers
//! never see the standardization: `plane.decision(x)` on raw features equals
//! the internal decision on standardized ones.

use super::{validate_dataset, LearnError, Plane};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    /// Hinge-loss penalty weight.
    pub cost: f64,
    /// Projected-gradient convergence threshold.
    pub tol: f64,
    pub max_epochs: usize,
    /// Seeds the per-epoch coordinate order.
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { cost: 1.0, tol: 1e-4, max_epochs: 1000, seed: 0 }
    }
}

/// Training diagnostics alongside the plane.
#[derive(Debug, Clone)]
pub struct SvmDetails {
    pub plane: Plane,
    /// Final dual variables, one per sample.
    pub alphas: Vec<f64>,
    /// Regularized hinge objective in standardized-augmented space.
    pub primal_objective: f64,
    /// Dual objective in the same space; equals primal at the optimum.
    pub dual_objective: f64,
    /// Dual objective after each epoch; non-decreasing.
    pub dual_history: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
}

pub fn train_svm(xs: &[Vec<f64>], ys: &[f64], params: &SvmParams) -> Result<Plane, LearnError> {
    train_svm_detailed(xs, ys, params).map(|d| d.plane)
}

pub fn train_svm_detailed(
    xs: &[Vec<f64>],
    ys: &[f64],
    params: &SvmParams,
) -> Result<SvmDetails, LearnError> {
    let d = validate_dataset(xs, ys)?;
    if ys.iter().all(|&y| y == ys[0]) {
        return Err(LearnError::SingleClass { attempts: 0 });
    }
    let n = xs.len();

    // Population moments; a zero-spread column standardizes to itself.
    let mut mean = vec![0.0; d];
    for x in xs {
        for (m, &v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut sigma = vec![0.0; d];
    for x in xs {
        for (s, (&v, &m)) in sigma.iter_mut().zip(x.iter().zip(&mean)) {
            *s += (v - m) * (v - m);
        }
    }
    for s in sigma.iter_mut() {
        *s = (*s / n as f64).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }

    // Standardized rows with the constant bias feature appended.
    let aug = d + 1;
    let rows: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| {
            let mut r: Vec<f64> =
                x.iter().zip(mean.iter().zip(&sigma)).map(|(&v, (&m, &s))| (v - m) / s).collect();
            r.push(1.0);
            r
        })
        .collect();
    let q_diag: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum()).collect();

    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; aug];
    let mut rng = ChaCha12Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut dual_history = Vec::new();
    let mut epochs = 0;
    let mut converged = false;

    while epochs < params.max_epochs {
        epochs += 1;
        for i in (1..n).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut pg_max = 0.0f64;
        for &i in &order {
            let row = &rows[i];
            let y = ys[i];
            let g = y * dot(&w, row) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == params.cost {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg.abs());
            if pg != 0.0 {
                let next = (alpha[i] - g / q_diag[i]).clamp(0.0, params.cost);
                let step = next - alpha[i];
                if step != 0.0 {
                    for (wj, &rj) in w.iter_mut().zip(row) {
                        *wj += step * y * rj;
                    }
                    alpha[i] = next;
                }
            }
        }
        dual_history.push(dual_objective(&alpha, &w));
        if pg_max <= params.tol {
            converged = true;
            break;
        }
    }

    let primal_objective = {
        let reg: f64 = 0.5 * dot(&w, &w);
        let hinge: f64 =
            rows.iter().zip(ys).map(|(r, &y)| (1.0 - y * dot(&w, r)).max(0.0)).sum();
        reg + params.cost * hinge
    };
    let dual = dual_objective(&alpha, &w);

    // Fold the standardization back so the plane acts on raw features.
    let b_std = w[d];
    let mut w_raw = vec![0.0; d];
    let mut b_raw = b_std;
    for j in 0..d {
        w_raw[j] = w[j] / sigma[j];
        b_raw -= w[j] * mean[j] / sigma[j];
    }

    Ok(SvmDetails {
        plane: Plane { w: w_raw, b: b_raw },
        alphas: alpha,
        primal_objective,
        dual_objective: dual,
        dual_history,
        epochs,
        converged,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dual_objective(alpha: &[f64], w: &[f64]) -> f64 {
    alpha.iter().sum::<f64>() - 0.5 * dot(w, w)
}
