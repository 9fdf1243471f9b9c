//! The trainable feature extractor and its softmax head.
//!
//! The encoder is an MLP `input -> hidden... -> feature_dim`. The classifier
//! is a bias-free linear map `W: C x d` on top of the features, so the logit
//! of class `c` is `w_c . z`.

mod checkpoint;
mod loss;
mod train;

pub use checkpoint::Checkpoint;
pub use loss::{
    cross_entropy_loss, hood_loss, loss_gradient, mmd_loss, objective_loss, oe_uniform_loss, Gradients,
    LabeledBatch, LossBreakdown, Objective,
};
pub use train::{cosine_lr, train, EpochLog, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `h` and output `a`.
    #[inline]
    fn derivative(self, h: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Architecture knobs that do not depend on the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub activation: Activation,
    /// Apply the activation to the feature layer too (penultimate-layer style
    /// non-negative features for relu).
    pub activate_features: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            feature_dim: 16,
            activation: Activation::Relu,
            activate_features: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::contract("feature_dim must be at least 1"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::contract("hidden layer widths must be positive"));
        }
        Ok(())
    }
}

/// One affine layer, `h = a W^T + b` with `W: out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Matrix::zeros(output, input),
            b: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }

    fn affine(&self, a: &Matrix) -> Result<Matrix> {
        let mut h = a.matmul_t(&self.w)?;
        for i in 0..h.rows() {
            for (v, b) in h.row_mut(i).iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        Ok(h)
    }
}

/// Encoder weights plus the classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<Layer>,
    pub classifier: Matrix,
    pub activation: Activation,
    pub activate_features: bool,
}

/// Pre- and post-activation values of every layer, kept for backprop.
pub(crate) struct ForwardCache {
    /// `inputs[l]` is the input of layer `l`; the last entry is the feature matrix.
    pub inputs: Vec<Matrix>,
    pub pre: Vec<Matrix>,
}

impl ForwardCache {
    pub fn features(&self) -> &Matrix {
        self.inputs.last().expect("cache always holds the input")
    }
}

impl EncoderParams {
    /// He-style (relu) or Glorot-style (tanh) random initialization.
    pub fn init(input_dim: usize, classes: usize, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if classes < 2 {
            return Err(Error::contract(format!("need at least 2 classes, got {classes}")));
        }
        if input_dim == 0 {
            return Err(Error::contract("input_dim must be at least 1"));
        }
        let mut dims = vec![input_dim];
        dims.extend(&cfg.hidden);
        dims.push(cfg.feature_dim);
        let gain = match cfg.activation {
            Activation::Relu => 2.0,
            Activation::Tanh => 1.0,
        };
        let layers = dims
            .windows(2)
            .map(|w| {
                let std = (gain / w[0] as f64).sqrt();
                Layer {
                    w: Matrix::from_fn(w[1], w[0], |_, _| std * rng.normal()),
                    b: vec![0.0; w[1]],
                }
            })
            .collect();
        let std = (1.0 / cfg.feature_dim as f64).sqrt();
        let classifier = Matrix::from_fn(classes, cfg.feature_dim, |_, _| std * rng.normal());
        Ok(Self {
            layers,
            classifier,
            activation: cfg.activation,
            activate_features: cfg.activate_features,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.classifier.cols()
    }

    pub fn classes(&self) -> usize {
        self.classifier.rows()
    }

    /// Checks that layer shapes chain and every value is finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::contract("encoder needs at least one layer"));
        }
        for (l, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::mismatch(
                    "EncoderParams",
                    format!("layer {} input {}", l + 1, pair[0].output_dim()),
                    pair[1].input_dim(),
                ));
            }
        }
        for layer in &self.layers {
            if layer.b.len() != layer.output_dim() {
                return Err(Error::mismatch("EncoderParams bias", layer.output_dim(), layer.b.len()));
            }
        }
        let last = self.layers.last().unwrap().output_dim();
        if self.classifier.cols() != last {
            return Err(Error::mismatch("EncoderParams classifier", format!("{last} columns"), self.classifier.cols()));
        }
        if self.classes() < 2 {
            return Err(Error::contract("classifier needs at least 2 classes"));
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("encoder parameters".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.is_finite() && l.b.iter().all(|v| v.is_finite())) && self.classifier.is_finite()
    }

    fn activates(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.activate_features
    }

    pub(crate) fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.cols() != self.input_dim() {
            return Err(Error::mismatch("forward", format!("{} input columns", self.input_dim()), x.cols()));
        }
        let mut inputs = vec![x.clone()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let h = layer.affine(inputs.last().unwrap())?;
            let mut a = h.clone();
            if self.activates(l) {
                a.data_mut().iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            pre.push(h);
            inputs.push(a);
        }
        Ok(ForwardCache { inputs, pre })
    }

    /// Backpropagates `d_features` through the MLP into `grads.layers`.
    pub(crate) fn backward(&self, cache: &ForwardCache, d_features: Matrix, grads: &mut Gradients) -> Result<()> {
        let mut upstream = d_features;
        for l in (0..self.layers.len()).rev() {
            if self.activates(l) {
                let (h, a) = (&cache.pre[l], &cache.inputs[l + 1]);
                for ((u, &hv), &av) in upstream.data_mut().iter_mut().zip(h.data()).zip(a.data()) {
                    *u *= self.activation.derivative(hv, av);
                }
            }
            let dw = upstream.t_matmul(&cache.inputs[l])?;
            grads.layers[l].w.add_scaled(&dw, 1.0)?;
            for row in upstream.row_iter() {
                for (gb, v) in grads.layers[l].b.iter_mut().zip(row) {
                    *gb += v;
                }
            }
            if l > 0 {
                upstream = upstream.matmul(&self.layers[l].w)?;
            }
        }
        Ok(())
    }

    /// Features `f(x)`, one row per sample.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut cache = self.forward_cached(x)?;
        Ok(cache.inputs.pop().unwrap())
    }

    /// Logits `z W^T` for a feature matrix.
    pub fn logits(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.feature_dim() {
            return Err(Error::mismatch("logits", format!("{} feature columns", self.feature_dim()), z.cols()));
        }
        z.matmul_t(&self.classifier)
    }

    /// Flat views of every tensor, paired with whether weight decay applies.
    /// Flat parameter slices, each flagged with whether weight decay applies.
    pub fn tensors_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        let mut out: Vec<(&mut [f64], bool)> = Vec::new();
        for layer in &mut self.layers {
            out.push((layer.w.data_mut(), true));
            out.push((layer.b.as_mut_slice(), false));
        }
        out.push((self.classifier.data_mut(), true));
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.layers {
            out.push(layer.w.data());
            out.push(&layer.b);
        }
        out.push(self.classifier.data());
        out
    }
}

/// Numerically stable log-softmax of one row of logits.
pub(crate) fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

pub(crate) fn softmax(row: &[f64]) -> Vec<f64> {
    log_softmax(row).into_iter().map(f64::exp).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_params(input: usize, hidden: &[usize], d: usize, c: usize, act: Activation) -> EncoderParams {
        let mut dims = vec![input];
        dims.extend(hidden);
        dims.push(d);
        EncoderParams {
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            classifier: Matrix::zeros(c, d),
            activation: act,
            activate_features: true,
        }
    }

    #[test]
    fn zero_map_gives_zero_features() {
        let p = zero_params(4, &[5, 3], 2, 3, Activation::Relu);
        let x = Matrix::from_fn(6, 4, |i, j| (i * 4 + j) as f64 - 7.0);
        let z = p.forward(&x).unwrap();
        assert_eq!(z.shape(), (6, 2));
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut p = zero_params(3, &[], 3, 2, Activation::Tanh);
        p.layers[0].w = Matrix::identity(3);
        p.activate_features = false;
        let x = Matrix::from_fn(5, 3, |i, j| i as f64 * 0.5 - j as f64);
        assert_eq!(p.forward(&x).unwrap(), x);
    }

    #[test]
    fn random_params_give_finite_features() {
        let mut rng = Rng::new(5);
        for act in [Activation::Relu, Activation::Tanh] {
            let cfg = ModelConfig { activation: act, ..ModelConfig::default() };
            let p = EncoderParams::init(8, 4, &cfg, &mut rng).unwrap();
            p.validate().unwrap();
            let x = Matrix::from_fn(50, 8, |_, _| 10.0 * rng.normal());
            assert!(p.forward(&x).unwrap().is_finite());
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = zero_params(4, &[], 2, 2, Activation::Relu);
        assert!(matches!(p.forward(&Matrix::zeros(2, 3)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn init_rejects_single_class() {
        assert!(EncoderParams::init(3, 1, &ModelConfig::default(), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn log_softmax_is_stable() {
        let l = log_softmax(&[1000.0, 0.0]);
        assert!(l[0].abs() < 1e-300 && (l[1] + 1000.0).abs() < 1e-9);
    }
}
