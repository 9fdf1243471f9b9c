//! Gram matrices, centering, and their gradients with respect to the inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, sq_dist, Matrix};

const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `exp(-|x-y|^2 / (2 sigma^2))`
    Rbf,
    /// `x . y`
    Linear,
    /// Inverse multi-quadric `1 / sqrt(|x-y|^2 + c)`
    Imq,
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KernelKind::Rbf => "rbf",
            KernelKind::Linear => "linear",
            KernelKind::Imq => "imq",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// RBF temperature.
    pub sigma: f64,
    /// IMQ offset.
    pub imq_c: f64,
    /// L2-normalize each feature row before evaluating the kernel.
    pub normalize: bool,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            kind: KernelKind::Rbf,
            sigma: 5.0,
            imq_c: 1.0,
            normalize: false,
        }
    }
}

impl KernelSpec {
    pub fn rbf(sigma: f64) -> Self {
        Self {
            kind: KernelKind::Rbf,
            sigma,
            ..Self::default()
        }
    }

    pub fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            ..Self::default()
        }
    }

    pub fn imq(c: f64) -> Self {
        Self {
            kind: KernelKind::Imq,
            imq_c: c,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::contract(format!("kernel sigma must be positive, got {}", self.sigma)));
        }
        if !(self.imq_c > 0.0 && self.imq_c.is_finite()) {
            return Err(Error::contract(format!("kernel imq_c must be positive, got {}", self.imq_c)));
        }
        Ok(())
    }

    /// Kernel value for one pair of (already normalized) rows.
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Rbf => (-sq_dist(a, b) / (2.0 * self.sigma * self.sigma)).exp(),
            KernelKind::Linear => dot(a, b),
            KernelKind::Imq => 1.0 / (sq_dist(a, b) + self.imq_c).sqrt(),
        }
    }

    /// For the radial kernels, `dk/da = -coef * (a - b)`; `k` is the kernel value.
    #[inline]
    fn radial_coef(&self, k: f64) -> f64 {
        match self.kind {
            KernelKind::Rbf => k / (self.sigma * self.sigma),
            KernelKind::Imq => k * k * k,
            KernelKind::Linear => unreachable!("linear kernel is not radial"),
        }
    }
}

/// A square Gram matrix together with the kernel that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub k: Matrix,
    pub spec: KernelSpec,
}

impl KernelMatrix {
    pub fn n(&self) -> usize {
        self.k.rows()
    }
}

fn check_finite(x: &Matrix, op: &str) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("{op}: input contains non-finite entries")));
    }
    Ok(())
}

/// Row-wise L2 normalization, or a clone when the spec does not ask for it.
pub fn prepare(x: &Matrix, spec: &KernelSpec) -> Matrix {
    if !spec.normalize {
        return x.clone();
    }
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = (dot(row, row) + NORM_EPS).sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

/// Pulls a gradient w.r.t. normalized rows back to the raw rows.
fn normalize_backward(x: &Matrix, grad: Matrix, spec: &KernelSpec) -> Matrix {
    if !spec.normalize {
        return grad;
    }
    let mut out = grad;
    for i in 0..x.rows() {
        let xr = x.row(i);
        let norm = (dot(xr, xr) + NORM_EPS).sqrt();
        let g = out.row_mut(i);
        // y = x / n;  dx = (g - y (y . g)) / n
        let yg: f64 = xr.iter().zip(g.iter()).map(|(a, b)| a * b).sum::<f64>() / norm;
        for (gv, &xv) in g.iter_mut().zip(xr) {
            *gv = (*gv - xv / norm * yg) / norm;
        }
    }
    out
}

/// `K[i][j] = k(x_i, x_j)` for all row pairs of `x`.
pub fn kernel_matrix(x: &Matrix, spec: &KernelSpec) -> Result<KernelMatrix> {
    spec.validate()?;
    if x.rows() < 2 {
        return Err(Error::contract(format!("kernel_matrix needs at least 2 rows, got {}", x.rows())));
    }
    check_finite(x, "kernel_matrix")?;
    let x = prepare(x, spec);
    let n = x.rows();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = if i == j && spec.kind == KernelKind::Rbf {
                1.0
            } else {
                spec.eval(x.row(i), x.row(j))
            };
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    Ok(KernelMatrix { k, spec: *spec })
}

/// Rectangular kernel matrix `K[i][j] = k(x_i, y_j)`.
pub fn cross_kernel(x: &Matrix, y: &Matrix, spec: &KernelSpec) -> Result<Matrix> {
    spec.validate()?;
    if x.cols() != y.cols() {
        return Err(Error::mismatch("cross_kernel", format!("{} feature columns", x.cols()), y.cols()));
    }
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::contract("cross_kernel needs non-empty inputs"));
    }
    check_finite(x, "cross_kernel")?;
    check_finite(y, "cross_kernel")?;
    let (x, y) = (prepare(x, spec), prepare(y, spec));
    Ok(Matrix::from_fn(x.rows(), y.rows(), |i, j| spec.eval(x.row(i), y.row(j))))
}

/// `K H` with `H = I - 11^T / N`: every row has its own mean subtracted.
pub fn center(k: &KernelMatrix) -> Matrix {
    center_matrix(&k.k)
}

pub(crate) fn center_matrix(k: &Matrix) -> Matrix {
    let n = k.cols();
    let mut out = k.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / n as f64;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    out
}

/// Gradient of a scalar loss `L` w.r.t. `x` and `y`, given `upstream = dL/dK`
/// for `K = cross_kernel(x, y)`.
pub fn cross_backward(x: &Matrix, y: &Matrix, upstream: &Matrix, spec: &KernelSpec) -> Result<(Matrix, Matrix)> {
    if upstream.shape() != (x.rows(), y.rows()) {
        return Err(Error::mismatch(
            "cross_backward",
            format!("{}x{}", x.rows(), y.rows()),
            format!("{:?}", upstream.shape()),
        ));
    }
    let (xn, yn) = (prepare(x, spec), prepare(y, spec));
    let d = x.cols();
    let mut dx = Matrix::zeros(x.rows(), d);
    let mut dy = Matrix::zeros(y.rows(), d);
    for i in 0..x.rows() {
        let xi = xn.row(i);
        for j in 0..y.rows() {
            let g = upstream.get(i, j);
            if g == 0.0 {
                continue;
            }
            let yj = yn.row(j);
            match spec.kind {
                KernelKind::Linear => {
                    for (o, &v) in dx.row_mut(i).iter_mut().zip(yj) {
                        *o += g * v;
                    }
                    for (o, &v) in dy.row_mut(j).iter_mut().zip(xi) {
                        *o += g * v;
                    }
                }
                KernelKind::Rbf | KernelKind::Imq => {
                    let c = g * spec.radial_coef(spec.eval(xi, yj));
                    for t in 0..d {
                        let diff = xi[t] - yj[t];
                        dx.row_mut(i)[t] -= c * diff;
                        dy.row_mut(j)[t] += c * diff;
                    }
                }
            }
        }
    }
    Ok((normalize_backward(x, dx, spec), normalize_backward(y, dy, spec)))
}

/// Gradient w.r.t. `x` of a loss depending on the Gram matrix `kernel_matrix(x)`,
/// given `upstream = dL/dK` (need not be symmetric).
pub fn gram_backward(x: &Matrix, upstream: &Matrix, spec: &KernelSpec) -> Result<Matrix> {
    let (mut a, b) = cross_backward(x, x, upstream, spec)?;
    a.add_scaled(&b, 1.0)?;
    Ok(a)
}
