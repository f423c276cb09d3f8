//! Error types shared across the simulator.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violated a documented precondition.
    #[error("validation: {0}")]
    Validation(String),

    /// Tensor/layer shape mismatch; `layer` is the index of the offending layer.
    #[error("dimension mismatch at layer {layer}: {detail}")]
    Dimension { layer: usize, detail: String },

    /// Non-finite value where a finite one is required.
    #[error("numeric: {0}")]
    Numeric(String),

    /// A resource-allocation problem has no feasible solution.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Configuration error, located by JSON pointer.
    #[error("config error at {pointer}: {detail}")]
    Config { pointer: String, detail: String },

    /// Discrete-event engine misuse (e.g. past-dated event).
    #[error("simulation: {0}")]
    Sim(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn config(pointer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            pointer: pointer.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
