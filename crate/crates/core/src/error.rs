use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("conductance {g} outside device window [{min}, {max}]")]
    Domain { g: f64, min: f64, max: f64 },

    #[error("invalid device model: {0}")]
    InvalidDevice(String),

    #[error("invalid pulse trace: {0}")]
    InvalidTrace(String),

    #[error("power-law fit did not converge after {iterations} iterations (residual mse {mse:e})")]
    FitFailed { mse: f64, iterations: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("negative input {value} at index {index}; crossbar inputs must be non-negative")]
    NegativeInput { index: usize, value: f64 },

    #[error("initial weight {w0} needs a conductance offset of {needed} but only {available} is available (k too small)")]
    InitRange {
        w0: f64,
        needed: f64,
        available: f64,
    },

    #[error("invalid pulse plan: {0}")]
    InvalidPlan(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("forward cache is stale: network changed since the forward pass")]
    StaleCache,

    #[error("environment step after episode end")]
    EpisodeFinished,

    #[error("state ({position}, {velocity}) outside the mountain car state space")]
    StateOutOfBounds { position: f64, velocity: f64 },

    #[error("tile index table exhausted (capacity {capacity})")]
    TableFull { capacity: usize },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("negative feature {value} at sample {sample}, feature {feature}")]
    NegativeFeature {
        sample: usize,
        feature: usize,
        value: f32,
    },

    #[error("missing data file {0}")]
    MissingData(PathBuf),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
