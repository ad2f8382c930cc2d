//! Multi-view convolutional classification of patients from cardiac MR view sets.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: a small reverse-mode autodiff engine (convolution, max pooling,
//!   dense layers, activations, binary cross-entropy, Adam).
//! - [`model`]: the four-view classifier built on a shared convolutional trunk,
//!   plus its binary checkpoint format.
//! - [`data`]: PGM images, JSON manifests, view-set enumeration with zero
//!   imputation, augmentation and a synthetic phantom generator.
//! - [`cv`]: grouped, optionally stratified k-fold cross-validation.
//! - [`metrics`]: patient-level aggregation (ratio and max thresholding),
//!   ROC curves and AUC.
//! - [`cli`]: the `synth | train | cv | report` command surface.

pub mod cli;
pub mod cv;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod svg;

pub use error::{Error, Result};
