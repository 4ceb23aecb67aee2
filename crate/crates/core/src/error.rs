use thiserror::Error;

/// Errors raised anywhere in the simulation/estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("derivative of order {order} not available (maximum {max})")]
    UnsupportedDerivative { order: usize, max: usize },

    #[error("unknown built-in model `{0}`")]
    UnknownModel(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("point {x} lies outside the grid coverage [{lo}, {hi}]")]
    Extrapolation { x: f64, lo: f64, hi: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("numerical instability at step {step}: {reason}")]
    Instability { step: usize, reason: String },

    #[error("argument overflow: |{what}| = {value} exceeds 700")]
    Overflow { what: &'static str, value: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("TOML error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// True for errors caused by the user's input rather than by the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::UnknownModel(_)
                | Error::Assumption(_)
                | Error::Config(_)
                | Error::Schema(_)
                | Error::Toml(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
