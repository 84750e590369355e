//! Simulation core for studying how activation smoothness shapes gradient
//! propagation on noisy, reduced-precision (analog) neural-network hardware.
//!
//! The crate is `no_std` (it needs `alloc`) and is organised bottom-up:
//!
//! * [`tensor`] and [`autodiff`]: dense `f64` tensors and a small
//!   reverse-mode graph with straight-through analog nodes.
//! * [`quant`]: reduced precision, clamp, Gaussian noise, the
//!   error-probability calculus and the composed quantized-noise pipeline.
//! * [`activations`]: ReLU/LeakyReLU/GELU/SiLU, scaled GELU, linear
//!   interpolation between rectified and smooth units, GLU variants and the
//!   gradient step discontinuity metric.
//! * [`analysis`]: noisy quantized products, gradient-error surfaces and
//!   mini-batch accumulated derivative errors.
//! * [`data`]: in-memory datasets and synthetic generators.
//! * [`model`]: layer specs, ConvNet/MLP presets, training and evaluation.
#![no_std]

extern crate alloc;

pub mod activations;
pub mod analysis;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod model;
pub mod quant;
pub mod rng;
pub mod tensor;

pub use activations::{ActivationKind, ActivationSpec, GluParams};
pub use error::{Error, Result};
pub use quant::{QuantNoiseSpec, ResolvedNoise, Stage};
pub use rng::RngStream;
pub use tensor::Tensor;
