//! Crate-wide error type.
//!
//! Variants group failures the way the CLI reports them: configuration and
//! shape problems are caller mistakes (exit code 2), data problems are bad
//! inputs on disk (exit code 3), numeric and degeneracy problems are runtime
//! failures of the math itself (exit code 4).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or matrix dimensions that do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid configuration values (hyperparameters, dimensions, flags).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Invalid or inconsistent input data (manifests, labels, corpora).
    #[error("invalid data: {0}")]
    Data(String),

    /// An audio file that is not the PCM16 mono WAV this crate consumes.
    #[error("audio format: {0}")]
    Format(String),

    /// A sample rate outside the supported range.
    #[error("sample rate: {0}")]
    Rate(String),

    /// An input signal too short (or long) for the requested operation.
    #[error("input length: {0}")]
    Length(String),

    /// A class label outside the configured range, or a missing class.
    #[error("label: {0}")]
    Label(String),

    /// An input that is structurally valid but mathematically degenerate,
    /// e.g. a zero-norm weight column in the DoRA decomposition.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Non-finite values produced where the math requires finite ones.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A malformed or incompatible checkpoint container.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Malformed text input (JSON lines, CSV, numbers).
    #[error("parse: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
