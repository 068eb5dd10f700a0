use thiserror::Error;

use crate::noise::NoiseRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid generator matrix: {0}")]
    InvalidGenerator(String),

    #[error("singular or reducible chain: {0}")]
    Singular(String),

    #[error("truncation policy: {0}")]
    Truncation(String),

    #[error("grid mismatch: {0}")]
    Grid(String),

    #[error("implicit solve failed at step {step} (x = {x}, regime = {regime}): {reason}")]
    ImplicitSolve {
        step: usize,
        x: f64,
        regime: usize,
        reason: String,
    },

    /// A simulated path produced NaN or infinity. Carries the noise needed to
    /// replay the path in isolation.
    #[error("non-finite value on path {path_index} at step {step}")]
    NonFinite {
        path_index: u64,
        step: usize,
        record: Box<NoiseRecord>,
    },

    /// A single path failed; carries its replay record.
    #[error("path {path_index} failed: {message}")]
    OnPath {
        path_index: u64,
        message: String,
        record: Box<NoiseRecord>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
