//! Tri-stream multimodal variational autoencoder over paired images and
//! 1D signals.
//!
//! The numeric core is generic over [`Scalar`] (`f32` for training, `f64`
//! for gradient verification and attribution); the aliases below name the
//! concrete instantiations.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod latent;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod scalar;
pub mod training;

pub use error::{Error, FormatError, Result};
pub use scalar::Scalar;

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type Gaussian32 = latent::DiagonalGaussian<f32>;
pub type Gaussian64 = latent::DiagonalGaussian<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type ModelParams64 = model::ModelParams<f64>;
