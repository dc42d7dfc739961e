//! Digital watermarking for neural-network weights.
//!
//! Two embedding schemes share one pipeline: a spread-spectrum decoder that
//! thresholds projections at zero, and a quantization (dither-modulation)
//! decoder that reads the sign of a sine of the projection. Both are embedded
//! the same way — a differentiable penalty added to the task loss — so the
//! host network never needs post-hoc weight surgery.
//!
//! Crate layout:
//!
//! - [`key`] / [`message`]: seeded projection keys and payload bits
//! - [`tensor`]: weight tensors, host flattening, projections
//! - [`codec`]: classical quantizer embed/decode on fixed weights
//! - [`regularizer`]: the differentiable penalty and extraction rule
//! - [`nn`]: layers, training loop, synthetic data, checkpoints
//! - [`attacks`]: fine-tuning and pruning robustness attacks
//! - [`experiment`]: config-driven runs, reports, sweeps

pub mod attacks;
pub mod codec;
pub mod error;
pub mod experiment;
pub mod key;
pub mod message;
pub mod nn;
pub mod params;
pub mod regularizer;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use key::{KeyFile, ProjectionKey};
pub use message::{bit_error_rate, WatermarkMessage};
pub use regularizer::{DecoderKind, WatermarkRegularizer};
pub use rng::{Prng, GENERATOR_ID};
pub use tensor::{unflatten_gradient, FlattenedHost, TensorShape, WeightTensor};
