//! Reverse-mode automatic differentiation over dense NCHW tensors.
//!
//! The engine is deliberately small: a [`Tape`] records closures, a [`Var`]
//! pairs a value with its tape slot, and [`kernels`] holds the array code
//! (im2col convolution on top of `matrixmultiply`, pooling, bilinear
//! warping and resampling). Everything is generic over [`Float`] so the same
//! model code runs in `f32` for training and `f64` for gradient checks.

mod float;
pub mod gradcheck;
pub mod kernels;
pub mod nn;
mod ops;
pub mod optim;
mod params;
mod tape;
mod tensor;

pub use float::Float;
pub use kernels::ConvGeom;
pub use ops::{concat, sum_all};
pub use params::{ParamBuilder, ParamId, ParamStore, ParamVars};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
