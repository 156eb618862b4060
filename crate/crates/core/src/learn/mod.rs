//! Linear surrogate classifiers: a hinge-loss SVM trainer and a bagged
//! ensemble built on it.
//!
//! A [`Plane`] is one affine decision function in raw (unstandardized)
//! feature space: `decision(x) = w . x + b`, positive for the acceptable
//! class. An [`Ensemble`] holds several planes trained on bootstrap
//! resamples plus per-plane weights, and classifies by weighted majority
//! vote over the plane signs; [`Ensemble::mean_plane`] collapses it to a
//! single averaged affine function for uses that need one linear row.

mod bagging;
mod svm;

pub use bagging::{bootstrap_indices, train_bagging, BaggingParams};
pub use svm::{train_svm, train_svm_detailed, SvmDetails, SvmParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Serialization format version for [`Ensemble`] files.
pub const ENSEMBLE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("empty training set")]
    Empty,
    #[error("sample {sample} has {got} features, expected {expected}")]
    RaggedFeatures { sample: usize, expected: usize, got: usize },
    #[error("labels must be +1 or -1, found {0}")]
    BadLabel(f64),
    #[error("{got} labels for {samples} samples")]
    LabelCount { samples: usize, got: usize },
    #[error("training set holds a single class after {attempts} resampling attempts")]
    SingleClass { attempts: u32 },
    #[error("ensemble must hold at least one plane")]
    NoPlanes,
    #[error("ensemble file version {got} unsupported (expected {expected})")]
    Version { expected: u32, got: u32 },
    #[error("plane {plane} has {got} coefficients, expected {expected}")]
    PlaneWidth { plane: usize, expected: usize, got: usize },
}

/// Affine decision function in raw feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Plane {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.b + self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
    }

    /// Class in {-1, +1}; a decision of exactly zero counts as +1.
    pub fn classify(&self, x: &[f64]) -> f64 {
        if self.decision(x) >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub cost: f64,
    pub tol: f64,
    pub max_epochs: usize,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub version: u32,
    /// Feature names in the order every plane's `w` follows.
    pub feature_order: Vec<String>,
    pub planes: Vec<Plane>,
    /// Per-plane vote weights (uniform unless a caller reweights).
    pub weights: Vec<f64>,
    pub training_meta: TrainingMeta,
}

impl Ensemble {
    pub fn n_planes(&self) -> usize {
        self.planes.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_order.len()
    }

    /// Weighted vote margin: sum of weight * sign(plane decision). Positive
    /// means the planes lean acceptable.
    pub fn vote(&self, x: &[f64]) -> f64 {
        self.planes
            .iter()
            .zip(&self.weights)
            .map(|(p, &wt)| wt * p.classify(x))
            .sum()
    }

    /// Class in {-1, +1} by weighted majority; a tied vote counts as +1.
    pub fn classify(&self, x: &[f64]) -> f64 {
        if self.vote(x) >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Weight-averaged single plane, the one-row collapse of the ensemble.
    pub fn mean_plane(&self) -> Plane {
        let total: f64 = self.weights.iter().sum();
        let scale = if total == 0.0 { 1.0 } else { 1.0 / total };
        let d = self.n_features();
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        for (p, &wt) in self.planes.iter().zip(&self.weights) {
            for (acc, &pw) in w.iter_mut().zip(&p.w) {
                *acc += wt * pw * scale;
            }
            b += wt * p.b * scale;
        }
        Plane { w, b }
    }

    /// Structural validity: version, at least one plane, consistent widths.
    pub fn check(&self) -> Result<(), LearnError> {
        if self.version != ENSEMBLE_VERSION {
            return Err(LearnError::Version { expected: ENSEMBLE_VERSION, got: self.version });
        }
        if self.planes.is_empty() {
            return Err(LearnError::NoPlanes);
        }
        let d = self.feature_order.len();
        for (i, p) in self.planes.iter().enumerate() {
            if p.w.len() != d {
                return Err(LearnError::PlaneWidth { plane: i, expected: d, got: p.w.len() });
            }
        }
        if self.weights.len() != self.planes.len() {
            return Err(LearnError::PlaneWidth {
                plane: self.weights.len(),
                expected: self.planes.len(),
                got: self.weights.len(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let e: Ensemble = serde_json::from_str(text).map_err(|e| e.to_string())?;
        e.check().map_err(|e| e.to_string())?;
        Ok(e)
    }
}

/// Binary confusion counts with +1 as the positive class. Each count is
/// named after the sample's true class: a false negative is a negative
/// (-1) sample the classifier wrongly calls +1, a false positive is a
/// positive (+1) sample wrongly called -1. With +1 meaning "feasible",
/// false negatives are the dangerous misses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub true_positive: usize,
    pub true_negative: usize,
    pub false_positive: usize,
    pub false_negative: usize,
}

impl Metrics {
    pub fn total(&self) -> usize {
        self.true_positive + self.true_negative + self.false_positive + self.false_negative
    }

    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            return 0.0;
        }
        (self.true_positive + self.true_negative) as f64 / t as f64
    }
}

/// How an ensemble turns plane outputs into a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    /// Weighted majority over per-plane signs.
    VoteSign,
    /// Sign of the weight-averaged plane's raw score.
    MeanAffine,
}

/// Confusion counts of the vote classifier over a labeled set (labels in
/// {-1, +1}).
pub fn evaluate(ensemble: &Ensemble, xs: &[Vec<f64>], ys: &[f64]) -> Metrics {
    evaluate_with(ensemble, xs, ys, PredictMode::VoteSign)
}

/// Confusion counts under either prediction mode.
pub fn evaluate_with(ensemble: &Ensemble, xs: &[Vec<f64>], ys: &[f64], mode: PredictMode) -> Metrics {
    let mean = match mode {
        PredictMode::VoteSign => None,
        PredictMode::MeanAffine => Some(ensemble.mean_plane()),
    };
    let mut m = Metrics::default();
    for (x, &y) in xs.iter().zip(ys) {
        let pred = match &mean {
            None => ensemble.classify(x),
            Some(p) => p.classify(x),
        };
        match (y > 0.0, pred > 0.0) {
            (true, true) => m.true_positive += 1,
            (false, false) => m.true_negative += 1,
            (false, true) => m.false_negative += 1,
            (true, false) => m.false_positive += 1,
        }
    }
    m
}

pub(crate) fn validate_dataset(xs: &[Vec<f64>], ys: &[f64]) -> Result<usize, LearnError> {
    if xs.is_empty() {
        return Err(LearnError::Empty);
    }
    if ys.len() != xs.len() {
        return Err(LearnError::LabelCount { samples: xs.len(), got: ys.len() });
    }
    let d = xs[0].len();
    for (i, x) in xs.iter().enumerate() {
        if x.len() != d {
            return Err(LearnError::RaggedFeatures { sample: i, expected: d, got: x.len() });
        }
    }
    for &y in ys {
        if y != 1.0 && y != -1.0 {
            return Err(LearnError::BadLabel(y));
        }
    }
    Ok(d)
}
