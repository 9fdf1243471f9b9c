//! SGD with Nesterov momentum, decoupled-from-bias weight decay, and a cosine
//! learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::{loss_gradient, EncoderParams, Gradients, LossBreakdown, ModelConfig, Objective};
use crate::data::{fixed_outlier_epochs, DatasetBundle, EpochBatches};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::numerics::{derive_seed, Rng};

const STREAM_INIT: u64 = 1;
const STREAM_OUTLIER_GROUPS: u64 = 2;
const STREAM_EPOCH: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Weight of the dependence term.
    pub lambda: f64,
    pub kernel: KernelSpec,
    pub epochs: usize,
    pub base_lr: f64,
    pub final_lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    /// Inliers per step.
    pub batch_in: usize,
    /// Outliers per inlier in each step.
    pub ratio_out_in: usize,
    /// Number of fixed outlier subsets; epoch `e` uses subset `e mod outlier_groups`.
    pub outlier_groups: usize,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Hood,
            lambda: 1.0,
            kernel: KernelSpec::default(),
            epochs: 50,
            base_lr: 0.1,
            final_lr: 1e-5,
            momentum: 0.9,
            nesterov: true,
            weight_decay: 5e-4,
            batch_in: 64,
            ratio_out_in: 2,
            outlier_groups: 5,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_in < 2 {
            return Err(Error::contract(format!("batch_in must be at least 2, got {}", self.batch_in)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::contract(format!("lambda must be finite and non-negative, got {}", self.lambda)));
        }
        if !(self.final_lr >= 0.0 && self.base_lr > self.final_lr && self.base_lr.is_finite()) {
            return Err(Error::contract(format!(
                "need base_lr > final_lr >= 0, got base_lr {} final_lr {}",
                self.base_lr, self.final_lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::contract(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::contract(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.outlier_groups == 0 {
            return Err(Error::contract("outlier_groups must be at least 1"));
        }
        self.kernel.validate()?;
        self.model.validate()
    }

    fn needs_outliers(&self) -> bool {
        self.objective.uses_outliers() && self.ratio_out_in > 0
    }
}

/// Cosine decay from `base` at step 0 to `final_lr` at step `total - 1`.
pub fn cosine_lr(step: usize, total: usize, base: f64, final_lr: f64) -> f64 {
    let progress = if total > 1 { step as f64 / (total - 1) as f64 } else { 1.0 };
    final_lr + 0.5 * (base - final_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Learning rate of the last step of the epoch.
    pub lr: f64,
    /// Step-averaged losses.
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub history: Vec<EpochLog>,
}

struct Sgd {
    velocity: Vec<Vec<f64>>,
    momentum: f64,
    nesterov: bool,
    weight_decay: f64,
}

impl Sgd {
    fn new(params: &EncoderParams, cfg: &TrainConfig) -> Self {
        Self {
            velocity: params.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
            momentum: cfg.momentum,
            nesterov: cfg.nesterov,
            weight_decay: cfg.weight_decay,
        }
    }

    fn step(&mut self, params: &mut EncoderParams, grads: &Gradients, lr: f64) {
        let grad_tensors = grads.tensors();
        for (((w, decay), g), v) in params.tensors_mut().into_iter().zip(grad_tensors).zip(&mut self.velocity) {
            for ((wi, &gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
                let mut d = gi;
                if decay {
                    d += self.weight_decay * *wi;
                }
                *vi = self.momentum * *vi + d;
                let step = if self.nesterov { d + self.momentum * *vi } else { *vi };
                *wi -= lr * step;
            }
        }
    }
}

/// Trains an encoder on `bundle` and returns the final parameters together
/// with per-epoch loss averages.
pub fn train(cfg: &TrainConfig, bundle: &DatasetBundle) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n_train = bundle.train_in.rows();
    if n_train == 0 {
        return Err(Error::contract("training set is empty"));
    }
    if n_train < cfg.batch_in {
        return Err(Error::contract(format!(
            "training set has {n_train} inliers, fewer than batch_in {}",
            cfg.batch_in
        )));
    }
    let mut params = EncoderParams::init(
        bundle.train_in.cols(),
        bundle.classes,
        &cfg.model,
        &mut Rng::new(derive_seed(cfg.seed, &[STREAM_INIT])),
    )?;
    let steps_per_epoch = n_train / cfg.batch_in;
    let total_steps = steps_per_epoch * cfg.epochs;
    let groups = if cfg.needs_outliers() && cfg.epochs > 0 {
        let per_epoch = steps_per_epoch * cfg.batch_in * cfg.ratio_out_in;
        fixed_outlier_epochs(
            &bundle.train_out,
            cfg.outlier_groups.min(cfg.epochs),
            per_epoch,
            derive_seed(cfg.seed, &[STREAM_OUTLIER_GROUPS]),
        )?
    } else {
        Vec::new()
    };

    let mut opt = Sgd::new(&params, cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let group: &[usize] = if groups.is_empty() { &[] } else { &groups[epoch % groups.len()] };
        let mut rng = Rng::new(derive_seed(cfg.seed, &[STREAM_EPOCH, epoch as u64]));
        let mut batches = EpochBatches::new(bundle, group, cfg, &mut rng)?;
        let mut sum = LossBreakdown::default();
        let mut lr = cfg.base_lr;
        for _ in 0..steps_per_epoch {
            let batch = batches.next_batch()?;
            let (loss, grads) = loss_gradient(&params, &batch, cfg)?;
            lr = cosine_lr(step, total_steps, cfg.base_lr, cfg.final_lr);
            opt.step(&mut params, &grads, lr);
            if !params.is_finite() {
                return Err(Error::NonFinite(format!("parameters after step {step} (epoch {epoch})")));
            }
            sum.total += loss.total;
            sum.cls += loss.cls;
            sum.dep += loss.dep;
            step += 1;
        }
        let k = steps_per_epoch as f64;
        history.push(EpochLog {
            epoch,
            lr,
            loss: LossBreakdown {
                total: sum.total / k,
                cls: sum.cls / k,
                dep: sum.dep / k,
            },
        });
    }
    Ok(TrainOutcome { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.1, 1e-5), 0.1);
        assert!((cosine_lr(99, 100, 0.1, 1e-5) - 1e-5).abs() < 1e-9);
        let mid = cosine_lr(50, 101, 0.1, 0.0);
        assert!((mid - 0.05).abs() < 1e-12);
        for s in 1..100 {
            assert!(cosine_lr(s, 100, 0.1, 1e-5) <= cosine_lr(s - 1, 100, 0.1, 1e-5));
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { batch_in: 1, ..TrainConfig::default() },
            TrainConfig { base_lr: 1e-5, ..TrainConfig::default() },
            TrainConfig { final_lr: -1.0, ..TrainConfig::default() },
            TrainConfig { lambda: -0.5, ..TrainConfig::default() },
            TrainConfig { momentum: 1.0, ..TrainConfig::default() },
            TrainConfig { outlier_groups: 0, ..TrainConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn nesterov_step_matches_hand_computation() {
        let mut rng = Rng::new(1);
        let model = ModelConfig { hidden: vec![], feature_dim: 1, ..ModelConfig::default() };
        let mut p = EncoderParams::init(1, 2, &model, &mut rng).unwrap();
        p.layers[0].w.set(0, 0, 2.0);
        let cfg = TrainConfig { weight_decay: 0.1, momentum: 0.5, ..TrainConfig::default() };
        let mut opt = Sgd::new(&p, &cfg);
        let mut g = Gradients::zeros_like(&p);
        g.layers[0].w.set(0, 0, 1.0);
        g.layers[0].b[0] = 1.0;
        opt.step(&mut p, &g, 0.1);
        // d = 1 + 0.1*2 = 1.2, v = 1.2, step = 1.2 + 0.5*1.2 = 1.8
        assert!((p.layers[0].w.get(0, 0) - (2.0 - 0.18)).abs() < 1e-15);
        // bias: no decay, d = 1, step = 1.5
        assert!((p.layers[0].b[0] + 0.15).abs() < 1e-15);
        opt.step(&mut p, &g, 0.1);
        let w = 2.0 - 0.18;
        let d = 1.0 + 0.1 * w;
        let v = 0.5 * 1.2 + d;
        assert!((p.layers[0].w.get(0, 0) - (w - 0.1 * (d + 0.5 * v))).abs() < 1e-15);
    }
}
