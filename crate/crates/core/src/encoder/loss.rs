//! Training objectives and their exact gradients.
//!
//! Every objective has the form `total = cls + lambda * dep`:
//!
//! | objective | `dep` |
//! |-----------|-------|
//! | `ce_only` | 0 |
//! | `hood` | mean over outlier groups of `hsic_biased(z, g_k)` |
//! | `mmd` | minus the mean over outlier groups of `mmd_biased(z, g_k)` |
//! | `oe_uniform` | mean over outliers of `KL(uniform || softmax(W g))` |
//!
//! The outlier batch holds `R * N` rows for `N` inliers. It is split into `R`
//! consecutive groups of `N` rows; each group is paired with the same inlier
//! features and the per-group estimates are averaged.

use serde::{Deserialize, Serialize};

use super::{log_softmax, EncoderParams, Layer, TrainConfig};
use crate::error::{Error, Result};
use crate::independence::{hsic_biased, hsic_with_grad, mmd_biased, mmd_with_grad};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Hood,
    OeUniform,
    Mmd,
    CeOnly,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Objective::Hood, Objective::OeUniform, Objective::Mmd, Objective::CeOnly];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Hood => "hood",
            Objective::OeUniform => "oe_uniform",
            Objective::Mmd => "mmd",
            Objective::CeOnly => "ce_only",
        }
    }

    pub fn uses_outliers(self) -> bool {
        self != Objective::CeOnly
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown objective `{s}` (expected hood, oe_uniform, mmd or ce_only)")))
    }
}

/// Labeled inliers and unlabeled outliers for one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub x_in: Matrix,
    pub labels: Vec<usize>,
    pub x_out: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub dep: f64,
}

/// Gradient of a loss w.r.t. every parameter, shaped like [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
    pub classifier: Matrix,
}

impl Gradients {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            layers: params.layers.iter().map(|l| Layer::zeros(l.input_dim(), l.output_dim())).collect(),
            classifier: Matrix::zeros(params.classes(), params.feature_dim()),
        }
    }

    /// Flat views in the same order as the parameter tensors.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.layers {
            out.push(layer.w.data());
            out.push(&layer.b);
        }
        out.push(self.classifier.data());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::mismatch("labels", format!("{rows} labels"), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::contract(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean cross-entropy of `softmax(z W^T)` against `labels`.
pub fn cross_entropy_loss(params: &EncoderParams, z: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(labels, z.rows(), params.classes())?;
    if z.rows() == 0 {
        return Err(Error::contract("cross entropy over an empty batch"));
    }
    let logits = params.logits(z)?;
    let total: f64 = logits
        .row_iter()
        .zip(labels)
        .map(|(row, &y)| -log_softmax(row)[y])
        .sum();
    Ok(total / z.rows() as f64)
}

/// Cross-entropy value and `dL/dlogits`.
fn cross_entropy_grad(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let n = logits.rows() as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    for (i, (row, &y)) in logits.row_iter().zip(labels).enumerate() {
        let ls = log_softmax(row);
        loss -= ls[y];
        for (c, g) in grad.row_mut(i).iter_mut().enumerate() {
            *g = (ls[c].exp() - if c == y { 1.0 } else { 0.0 }) / n;
        }
    }
    (loss / n, grad)
}

/// `KL(u || softmax)` averaged over rows, and its gradient w.r.t. the logits.
fn uniform_kl_grad(logits: &Matrix) -> (f64, Matrix) {
    let m = logits.rows() as f64;
    let c = logits.cols() as f64;
    let mut kl = 0.0;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    for (i, row) in logits.row_iter().enumerate() {
        let ls = log_softmax(row);
        // KL(u || p) = sum_c (1/C) (ln(1/C) - ln p_c)
        kl += -c.ln() - ls.iter().sum::<f64>() / c;
        for (g, l) in grad.row_mut(i).iter_mut().zip(&ls) {
            *g = (l.exp() - 1.0 / c) / m;
        }
    }
    (kl / m, grad)
}

fn outlier_groups(batch: &LabeledBatch, cfg: &TrainConfig) -> Result<usize> {
    let n = batch.x_in.rows();
    let m = batch.x_out.rows();
    if n == 0 {
        return Err(Error::contract("batch has no inliers"));
    }
    if !m.is_multiple_of(n) {
        return Err(Error::contract(format!("outlier count {m} is not a multiple of inlier count {n}")));
    }
    if m / n != cfg.ratio_out_in {
        return Err(Error::contract(format!(
            "outlier count {m} does not match ratio_out_in {} x {n} inliers",
            cfg.ratio_out_in
        )));
    }
    if batch.x_out.cols() != batch.x_in.cols() {
        return Err(Error::mismatch("batch", format!("{} outlier columns", batch.x_in.cols()), batch.x_out.cols()));
    }
    Ok(m / n)
}

/// Shared forward (and optional backward) pass for every objective.
fn evaluate(
    params: &EncoderParams,
    batch: &LabeledBatch,
    cfg: &TrainConfig,
    objective: Objective,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Gradients>)> {
    check_labels(&batch.labels, batch.x_in.rows(), params.classes())?;
    let n = batch.x_in.rows();
    let lambda = cfg.lambda;
    let groups = if objective.uses_outliers() { outlier_groups(batch, cfg)? } else { 0 };
    let stacked = if groups > 0 { batch.x_in.vstack(&batch.x_out)? } else { batch.x_in.clone() };

    let cache = params.forward_cached(&stacked)?;
    let features = cache.features();
    let z = features.slice_rows(0, n);
    let logits_in = params.logits(&z)?;
    let (cls, d_logits_in) = cross_entropy_grad(&logits_in, &batch.labels);

    let dep_grad = want_grad && lambda != 0.0;
    let mut d_features = Matrix::zeros(features.rows(), features.cols());
    let mut classifier_grad = want_grad.then(|| d_logits_in.t_matmul(&z)).transpose()?;
    let mut dep = 0.0;

    match objective {
        Objective::CeOnly => {}
        Objective::Hood | Objective::Mmd => {
            let sign = if objective == Objective::Hood { 1.0 } else { -1.0 };
            let weight = sign * lambda / groups as f64;
            for k in 0..groups {
                let (lo, hi) = (n + k * n, n + (k + 1) * n);
                let g = features.slice_rows(lo, hi);
                let spec = &cfg.kernel;
                if dep_grad {
                    let (v, dz, dg) = if objective == Objective::Hood {
                        hsic_with_grad(&z, &g, spec)?
                    } else {
                        mmd_with_grad(&z, &g, spec)?
                    };
                    dep += v;
                    accumulate_rows(&mut d_features, 0, &dz, weight);
                    accumulate_rows(&mut d_features, lo, &dg, weight);
                } else if objective == Objective::Hood {
                    dep += hsic_biased(&z, &g, spec)?.value;
                } else {
                    dep += mmd_biased(&z, &g, spec)?;
                }
            }
            dep = sign * dep / groups as f64;
        }
        Objective::OeUniform => {
            let g = features.slice_rows(n, features.rows());
            let logits_out = params.logits(&g)?;
            let (kl, d_logits_out) = uniform_kl_grad(&logits_out);
            dep = kl;
            if dep_grad {
                let d_logits_out = d_logits_out.scale(lambda);
                if let Some(cg) = classifier_grad.as_mut() {
                    cg.add_scaled(&d_logits_out.t_matmul(&g)?, 1.0)?;
                }
                accumulate_rows(&mut d_features, n, &d_logits_out.matmul(&params.classifier)?, 1.0);
            }
        }
    }

    let breakdown = LossBreakdown {
        total: cls + lambda * dep,
        cls,
        dep,
    };
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "{objective} loss (cls {}, dep {})",
            breakdown.cls, breakdown.dep
        )));
    }
    let Some(classifier) = classifier_grad else {
        return Ok((breakdown, None));
    };

    accumulate_rows(&mut d_features, 0, &d_logits_in.matmul(&params.classifier)?, 1.0);
    let mut grads = Gradients::zeros_like(params);
    grads.classifier = classifier;
    params.backward(&cache, d_features, &mut grads)?;
    Ok((breakdown, Some(grads)))
}

fn accumulate_rows(target: &mut Matrix, start: usize, src: &Matrix, scale: f64) {
    for i in 0..src.rows() {
        for (t, s) in target.row_mut(start + i).iter_mut().zip(src.row(i)) {
            *t += scale * s;
        }
    }
}

fn with_objective(cfg: &TrainConfig, objective: Objective) -> TrainConfig {
    TrainConfig {
        objective,
        ..cfg.clone()
    }
}

/// Cross-entropy on inliers plus `lambda` times the averaged per-group HSIC.
pub fn hood_loss(
    params: &EncoderParams,
    x_in: &Matrix,
    labels: &[usize],
    x_out: &Matrix,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let batch = LabeledBatch {
        x_in: x_in.clone(),
        labels: labels.to_vec(),
        x_out: x_out.clone(),
    };
    Ok(evaluate(params, &batch, &with_objective(cfg, Objective::Hood), Objective::Hood, false)?.0)
}

/// Outlier exposure with a uniform target; `dep` is the mean KL to uniform.
pub fn oe_uniform_loss(
    params: &EncoderParams,
    x_in: &Matrix,
    labels: &[usize],
    x_out: &Matrix,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let batch = LabeledBatch {
        x_in: x_in.clone(),
        labels: labels.to_vec(),
        x_out: x_out.clone(),
    };
    Ok(evaluate(params, &batch, &with_objective(cfg, Objective::OeUniform), Objective::OeUniform, false)?.0)
}

/// Discrepancy baseline: rewards a large MMD between inlier and outlier features.
pub fn mmd_loss(
    params: &EncoderParams,
    x_in: &Matrix,
    labels: &[usize],
    x_out: &Matrix,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let batch = LabeledBatch {
        x_in: x_in.clone(),
        labels: labels.to_vec(),
        x_out: x_out.clone(),
    };
    Ok(evaluate(params, &batch, &with_objective(cfg, Objective::Mmd), Objective::Mmd, false)?.0)
}

/// Loss of `cfg.objective` on one batch.
pub fn objective_loss(params: &EncoderParams, batch: &LabeledBatch, cfg: &TrainConfig) -> Result<LossBreakdown> {
    Ok(evaluate(params, batch, cfg, cfg.objective, false)?.0)
}

/// Loss of `cfg.objective` and its exact gradient w.r.t. every parameter.
pub fn loss_gradient(params: &EncoderParams, batch: &LabeledBatch, cfg: &TrainConfig) -> Result<(LossBreakdown, Gradients)> {
    let (loss, grads) = evaluate(params, batch, cfg, cfg.objective, true)?;
    Ok((loss, grads.expect("gradient requested")))
}
