//! Factorized disentangled representation learning for multi-factor RF signals.
//!
//! The crate covers the whole pipeline: a synthetic factor-labelled I/Q
//! generator ([`synth`]), a small reverse-mode autodiff engine ([`autodiff`]),
//! the encoder / decoder / factor-map / diffusion-generator model ([`model`])
//! with its training objectives ([`losses`]), a deterministic trainer
//! ([`train`]), a disentanglement metric suite ([`metrics`]), conditional
//! generation by factor swapping and resampling ([`generate`]) and the
//! classification comparison runner ([`classify`]).
//!
//! The autodiff engine, the losses and the model are generic over [`Scalar`]
//! (`f32` or `f64`); training and evaluation run in double precision through
//! the aliases below.

pub mod autodiff;
pub mod classify;
mod error;
pub mod generate;
pub mod io;
pub mod kv;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tape64 = autodiff::Tape<f64>;
