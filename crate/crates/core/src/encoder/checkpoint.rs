//! TOML checkpoints: config echo, layer shapes, and row-major weights.
//!
//! Floats are written in shortest round-trip form, so a save/load cycle
//! reproduces every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, EncoderParams, Layer, TrainConfig};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const FORMAT: &str = "hood-checkpoint-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: EncoderParams,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifierDoc {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    format: String,
    seed: u64,
    activation: Activation,
    activate_features: bool,
    config: TrainConfig,
    layers: Vec<LayerDoc>,
    classifier: ClassifierDoc,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, params: EncoderParams) -> Self {
        Self { config, params }
    }

    pub fn to_toml(&self) -> Result<String> {
        let doc = CheckpointDoc {
            format: FORMAT.to_string(),
            seed: self.config.seed,
            activation: self.params.activation,
            activate_features: self.params.activate_features,
            config: self.config.clone(),
            layers: self
                .params
                .layers
                .iter()
                .map(|l| LayerDoc {
                    rows: l.w.rows(),
                    cols: l.w.cols(),
                    weights: l.w.data().to_vec(),
                    bias: l.b.clone(),
                })
                .collect(),
            classifier: ClassifierDoc {
                rows: self.params.classifier.rows(),
                cols: self.params.classifier.cols(),
                weights: self.params.classifier.data().to_vec(),
            },
        };
        Ok(toml::to_string(&doc)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: CheckpointDoc = toml::from_str(text)?;
        if doc.format != FORMAT {
            return Err(Error::Format(format!("unsupported checkpoint format `{}`", doc.format)));
        }
        let layers = doc
            .layers
            .into_iter()
            .map(|l| {
                Ok(Layer {
                    w: Matrix::new(l.rows, l.cols, l.weights)?,
                    b: l.bias,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let params = EncoderParams {
            layers,
            classifier: Matrix::new(doc.classifier.rows, doc.classifier.cols, doc.classifier.weights)?,
            activation: doc.activation,
            activate_features: doc.activate_features,
        };
        params
            .validate()
            .map_err(|e| Error::Format(format!("checkpoint parameters invalid: {e}")))?;
        Ok(Self {
            config: doc.config,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}
