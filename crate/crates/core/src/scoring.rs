//! Test-time OOD scores. Higher score means more inlier-like for both the
//! correlation (COR) test and maximum softmax probability (MSP).

use serde::{Deserialize, Serialize};

use crate::encoder::{softmax, EncoderParams};
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// `max_c |mu_c . q|` over training class feature means.
    Cor,
    /// Maximum softmax probability.
    Msp,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Cor => "cor",
            ScoreKind::Msp => "msp",
        }
    }
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cor" => Ok(ScoreKind::Cor),
            "msp" => Ok(ScoreKind::Msp),
            other => Err(Error::contract(format!("unknown score `{other}` (expected cor or msp)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub is_inlier: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Ood,
    Inlier,
}

/// Per-class mean training features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMeans {
    pub mu: Matrix,
    pub counts: Vec<usize>,
    /// Global feature mean subtracted from both sides in the centered variant.
    pub offset: Option<Vec<f64>>,
}

/// `mu_c = mean of z_i over y_i = c`, from raw features.
pub fn class_means(z: &Matrix, labels: &[usize], classes: usize) -> Result<ClassMeans> {
    if labels.len() != z.rows() {
        return Err(Error::mismatch("class_means", format!("{} labels", z.rows()), labels.len()));
    }
    let mut mu = Matrix::zeros(classes, z.cols());
    let mut counts = vec![0usize; classes];
    for (row, &y) in z.row_iter().zip(labels) {
        if y >= classes {
            return Err(Error::contract(format!("label {y} out of range for {classes} classes")));
        }
        counts[y] += 1;
        for (m, v) in mu.row_mut(y).iter_mut().zip(row) {
            *m += v;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::contract(format!("class {empty} has no training samples")));
    }
    for (c, &n) in counts.iter().enumerate() {
        mu.row_mut(c).iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok(ClassMeans { mu, counts, offset: None })
}

/// Class means of features centered by the global training mean; test
/// features are centered by the same offset before scoring.
pub fn class_means_centered(z: &Matrix, labels: &[usize], classes: usize) -> Result<ClassMeans> {
    let offset = z.column_means();
    let mut means = class_means(&z.center_columns(), labels, classes)?;
    means.offset = Some(offset);
    Ok(means)
}

pub fn cor_score(means: &ClassMeans, q: &[f64]) -> Result<f64> {
    if q.len() != means.mu.cols() {
        return Err(Error::mismatch("cor_score", format!("feature of length {}", means.mu.cols()), q.len()));
    }
    let shifted;
    let q = match &means.offset {
        Some(m) => {
            shifted = q.iter().zip(m).map(|(a, b)| a - b).collect::<Vec<_>>();
            &shifted[..]
        }
        None => q,
    };
    Ok(means.mu.row_iter().map(|mu| dot(mu, q).abs()).fold(0.0, f64::max))
}

pub fn msp_score(params: &EncoderParams, q: &[f64]) -> Result<f64> {
    if q.len() != params.feature_dim() {
        return Err(Error::mismatch("msp_score", format!("feature of length {}", params.feature_dim()), q.len()));
    }
    let logits: Vec<f64> = params.classifier.row_iter().map(|w| dot(w, q)).collect();
    Ok(softmax(&logits).into_iter().fold(0.0, f64::max))
}

/// OOD iff `score <= tau`.
pub fn classify(score: f64, tau: f64) -> Decision {
    if score <= tau {
        Decision::Ood
    } else {
        Decision::Inlier
    }
}

/// Scores every row of a feature matrix.
pub fn score_features(kind: ScoreKind, features: &Matrix, params: &EncoderParams, means: &ClassMeans) -> Result<Vec<f64>> {
    features
        .row_iter()
        .map(|q| match kind {
            ScoreKind::Cor => cor_score(means, q),
            ScoreKind::Msp => msp_score(params, q),
        })
        .collect()
}

/// Quantities relating the correlation test to the cross-covariance penalty
/// for one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    /// `|mu . q|`
    pub lhs: f64,
    /// `(1/N) sum_j sum_i |z_ji q_i|`
    pub rhs: f64,
    /// `|Z^T G|_F^2` with every row of `G` equal to `q`.
    pub frob: f64,
}

pub fn appendix_bound_check(z_class: &Matrix, q: &[f64]) -> Result<BoundCheck> {
    if q.len() != z_class.cols() {
        return Err(Error::mismatch("appendix_bound_check", format!("feature of length {}", z_class.cols()), q.len()));
    }
    if z_class.rows() == 0 {
        return Err(Error::contract("appendix_bound_check needs at least one sample"));
    }
    let n = z_class.rows() as f64;
    let mu = z_class.column_means();
    let lhs = dot(&mu, q).abs();
    let rhs = z_class
        .row_iter()
        .map(|z| z.iter().zip(q).map(|(a, b)| (a * b).abs()).sum::<f64>())
        .sum::<f64>()
        / n;
    let g = Matrix::from_fn(z_class.rows(), q.len(), |_, j| q[j]);
    let frob = z_class.t_matmul(&g)?.frobenius_sq();
    Ok(BoundCheck { lhs, rhs, frob })
}
