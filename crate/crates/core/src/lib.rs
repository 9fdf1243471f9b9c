//! HSIC-regularized out-of-distribution detection at desk scale.
//!
//! A small MLP encoder is trained with cross-entropy on labeled inliers plus a
//! penalty on the Hilbert-Schmidt Independence Criterion between inlier and
//! outlier features. At test time a sample is scored by its largest absolute
//! inner product with the per-class training feature means; low scores flag
//! out-of-distribution inputs.
//!
//! Modules, bottom-up:
//!
//! | module | contents |
//! |--------|----------|
//! | [`numerics`] | row-major [`Matrix`], seeded [`Rng`] |
//! | [`kernels`] | RBF / linear / IMQ Gram matrices, centering, input gradients |
//! | [`independence`] | biased HSIC, MMD, permutation independence test |
//! | [`encoder`] | MLP, losses, manual gradients, SGD training, checkpoints |
//! | [`scoring`] | COR and MSP scores, thresholding, class means |
//! | [`metrics`] | FPR at fixed TPR, AUROC, AUPR |
//! | [`data`] | synthetic Gaussian bundles, fake-outlier distortion, batching |
//! | [`experiment`] | plan runner, result tables, sweep summaries |

pub mod data;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod independence;
pub mod kernels;
pub mod metrics;
pub mod numerics;
pub mod scoring;

pub use error::{Error, Result};
pub use kernels::{KernelKind, KernelSpec};
pub use numerics::{Matrix, Rng};
