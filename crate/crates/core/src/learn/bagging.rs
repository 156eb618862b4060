//! Bootstrap-aggregated SVM ensembles.
//!
//! Plane `m` draws its bootstrap resample (n of n, with replacement) from the
//! random substream indexed by `m`, so growing an ensemble from M to M + 1
//! planes reproduces the first M planes bit for bit; sweeps over ensemble
//! size therefore reuse training instead of redrawing everything. A resample
//! that collapses to a single class is redrawn from the same substream a few
//! times before the whole training run fails.

use super::svm::{train_svm, SvmParams};
use super::{validate_dataset, Ensemble, LearnError, TrainingMeta, ENSEMBLE_VERSION};
use crate::scenarios::substream;
use rand::Rng;

const RESAMPLE_ATTEMPTS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaggingParams {
    pub n_planes: usize,
    /// Hinge-loss penalty weight for every plane.
    pub cost: f64,
    /// Per-plane convergence threshold.
    pub tol: f64,
    pub max_epochs: usize,
    /// Root seed; plane `m` trains from substream `m`.
    pub seed: u64,
}

impl Default for BaggingParams {
    fn default() -> Self {
        BaggingParams { n_planes: 10, cost: 1.0, tol: 1e-4, max_epochs: 1000, seed: 0 }
    }
}

/// One bootstrap draw: n indices sampled uniformly with replacement.
pub fn bootstrap_indices(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

pub fn train_bagging(
    xs: &[Vec<f64>],
    ys: &[f64],
    feature_order: Vec<String>,
    params: &BaggingParams,
) -> Result<Ensemble, LearnError> {
    let d = validate_dataset(xs, ys)?;
    if feature_order.len() != d {
        return Err(LearnError::PlaneWidth { plane: 0, expected: d, got: feature_order.len() });
    }
    if params.n_planes == 0 {
        return Err(LearnError::NoPlanes);
    }
    let n = xs.len();
    let mut planes = Vec::with_capacity(params.n_planes);
    for m in 0..params.n_planes {
        let mut rng = substream(params.seed, m as u64);
        let mut chosen = None;
        for _ in 0..RESAMPLE_ATTEMPTS {
            let idx = bootstrap_indices(&mut rng, n);
            let has_pos = idx.iter().any(|&i| ys[i] > 0.0);
            let has_neg = idx.iter().any(|&i| ys[i] < 0.0);
            if has_pos && has_neg {
                chosen = Some(idx);
                break;
            }
        }
        let Some(idx) = chosen else {
            return Err(LearnError::SingleClass { attempts: RESAMPLE_ATTEMPTS });
        };
        let bx: Vec<Vec<f64>> = idx.iter().map(|&i| xs[i].clone()).collect();
        let by: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
        let svm_params = SvmParams {
            cost: params.cost,
            tol: params.tol,
            max_epochs: params.max_epochs,
            seed: rng.gen(),
        };
        planes.push(train_svm(&bx, &by, &svm_params)?);
    }
    Ok(Ensemble {
        version: ENSEMBLE_VERSION,
        feature_order,
        weights: vec![1.0; planes.len()],
        planes,
        training_meta: TrainingMeta {
            seed: params.seed,
            cost: params.cost,
            tol: params.tol,
            max_epochs: params.max_epochs,
            n_samples: n,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, Normal};
    use std::collections::HashSet;

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|i| format!("f{i}")).collect()
    }

    fn noisy_blobs(n_each: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.2).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..(2 * n_each) {
            let c = if i % 2 == 0 { 1.5 } else { -1.5 };
            xs.push(vec![c + noise.sample(&mut rng), noise.sample(&mut rng)]);
            ys.push(if i % 2 == 0 { 1.0 } else { -1.0 });
        }
        (xs, ys)
    }

    #[test]
    fn bootstrap_unique_fraction_near_632() {
        // With replacement, the expected unique fraction is 1 - 1/e.
        let mut rng = substream(0, 0);
        let idx = bootstrap_indices(&mut rng, 1000);
        assert_eq!(idx.len(), 1000);
        let unique: HashSet<usize> = idx.iter().copied().collect();
        let frac = unique.len() as f64 / 1000.0;
        assert!(
            (0.612..=0.652).contains(&frac),
            "unique fraction {frac} outside the expected band"
        );
    }

    #[test]
    fn growing_the_ensemble_preserves_earlier_planes() {
        let (xs, ys) = noisy_blobs(30, 5);
        let small = train_bagging(
            &xs,
            &ys,
            names(2),
            &BaggingParams { n_planes: 3, ..Default::default() },
        )
        .unwrap();
        let large = train_bagging(
            &xs,
            &ys,
            names(2),
            &BaggingParams { n_planes: 4, ..Default::default() },
        )
        .unwrap();
        for m in 0..3 {
            assert_eq!(small.planes[m], large.planes[m], "plane {m} changed with ensemble size");
        }
    }

    #[test]
    fn single_class_labels_fail_after_resampling() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let ys = vec![1.0; 10];
        match train_bagging(&xs, &ys, names(1), &BaggingParams::default()) {
            Err(LearnError::SingleClass { attempts }) => {
                assert_eq!(attempts, RESAMPLE_ATTEMPTS)
            }
            other => panic!("expected single-class failure, got {other:?}"),
        }
    }

    #[test]
    fn single_plane_ensemble_votes_like_its_plane() {
        let (xs, ys) = noisy_blobs(25, 9);
        let e = train_bagging(
            &xs,
            &ys,
            names(2),
            &BaggingParams { n_planes: 1, ..Default::default() },
        )
        .unwrap();
        assert_eq!(e.n_planes(), 1);
        for x in &xs {
            assert_eq!(e.classify(x), e.planes[0].classify(x));
        }
    }

    #[test]
    fn zero_planes_rejected() {
        let (xs, ys) = noisy_blobs(5, 1);
        assert!(matches!(
            train_bagging(&xs, &ys, names(2), &BaggingParams { n_planes: 0, ..Default::default() }),
            Err(LearnError::NoPlanes)
        ));
    }
}
