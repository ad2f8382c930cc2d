//! Minimal reverse-mode automatic differentiation for small convolutional
//! networks, in 64-bit floating point.
//!
//! Forward computations are recorded on a [`Tape`]; [`Tape::backward`]
//! replays them in reverse and accumulates gradients into every leaf that
//! requires one. The eager functions in this module ([`conv2d`],
//! [`maxpool2d`], ...) compute the same forward values without recording.

mod kernels;
mod optim;
mod tape;
mod tensor;

pub use optim::{Adam, AdamConfig};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use crate::{Error, Result};

/// Clamp applied to probabilities before taking logarithms in [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

/// 2D cross-correlation of a `[C_in, H, W]` input with `[C_out, C_in, kH, kW]`
/// kernels, zero padding on every side.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let geom = kernels::ConvGeom::new(input.shape(), kernels.shape(), bias.shape(), stride, padding)?;
    let (out, _) = kernels::conv2d_forward(&geom, input.values(), kernels.values(), bias.values());
    Tensor::new(geom.output_shape().to_vec(), out)
}

/// Non-overlapping max pooling over `[C, H, W]` with a square window.
pub fn maxpool2d(input: &Tensor, window: usize) -> Result<Tensor> {
    let geom = kernels::PoolGeom::new(input.shape(), window)?;
    let (out, _) = kernels::maxpool_forward(&geom, input.values());
    Tensor::new(geom.output_shape().to_vec(), out)
}

/// `weights · input + bias` for a flat input of length N and `[M, N]` weights.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = kernels::dense_dims(input.shape(), weights.shape(), bias.shape())?;
    let out = kernels::dense_forward(m, n, input.values(), weights.values(), bias.values());
    Tensor::new(vec![m], out)
}

pub fn relu(input: &Tensor) -> Tensor {
    let values = input.values().iter().map(|&x| x.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), values).expect("shape preserved")
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    let values = input.values().iter().map(|&x| sigmoid_scalar(x)).collect();
    Tensor::new(input.shape().to_vec(), values).expect("shape preserved")
}

/// Logistic function, branching on the sign of `x` so `exp` never overflows.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy of probabilities against 0/1 targets.
pub fn bce_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    kernels::check_bce(predictions.len(), targets)?;
    if predictions.is_empty() {
        return Err(Error::Shape("binary cross-entropy of an empty batch".into()));
    }
    let total: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &y)| kernels::bce_single(p, y))
        .sum();
    Ok(total / predictions.len() as f64)
}
