//! Contrastive background debiasing for small convolutional classifiers.
//!
//! The crate bundles a synthetic background-challenge benchmark
//! ([`synthgen`]), the pair-construction operators ([`compose`]), the
//! background-keyed negative dictionary ([`negdict`]), a from-scratch CNN with
//! its losses ([`netcore`]), the training loop ([`trainer`]) and every
//! measurement used to judge background bias ([`evalkit`]).

pub mod compose;
pub mod error;
pub mod evalkit;
pub mod negdict;
pub mod netcore;
pub mod rng;
pub mod scalar;
pub mod synthgen;
pub mod trainer;

pub use error::{CladError, Result};
pub use scalar::Scalar;

/// Single-precision model, the default for training and the checkpoint format.
pub type Encoder32 = netcore::Encoder<f32>;
/// Double-precision model, used for gradient verification.
pub type Encoder64 = netcore::Encoder<f64>;
pub type ImageBatch32 = netcore::ImageBatch<f32>;
pub type ImageBatch64 = netcore::ImageBatch<f64>;
