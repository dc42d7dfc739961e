//! Error type shared by all modules.

use thiserror::Error;

/// Errors produced by the watermarking toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix dimension did not match what the operation requires.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A spreading direction was expected to have unit L2 norm.
    #[error("direction is not unit-norm (|x| = {norm})")]
    NonUnitDirection { norm: f64 },

    /// Two directions in a multi-bit direction set are not orthogonal.
    #[error("directions {i} and {j} are not orthogonal (<x_i, x_j> = {dot})")]
    NonOrthogonalDirections { i: usize, j: usize, dot: f64 },

    /// A layer id referenced by an embed spec or attack does not exist.
    #[error("no trainable layer with id {id:?}")]
    LayerNotFound { id: String },

    /// An embed spec is inconsistent with the network it targets.
    #[error("invalid embed spec: {0}")]
    InvalidEmbedSpec(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step}: loss is not finite")]
    Diverged { epoch: usize, step: usize },

    /// An evaluation was requested on an empty test split.
    #[error("dataset has an empty test split")]
    EmptyTestSplit,

    /// An experiment or sweep configuration failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A checkpoint or key file is malformed.
    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
