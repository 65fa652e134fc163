use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("covariance of dimension {dim} is not positive definite after jitter {jitter:e}")]
    Factorization { dim: usize, jitter: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite density at draw {index}")]
    NonFiniteDensity { index: usize },

    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("non-finite loss for task {task}")]
    NonFiniteLoss { task: usize },

    #[error("non-finite state at step {step} of Lotka-Volterra simulation ({params})")]
    NonFiniteState { step: usize, params: String },

    #[error("autoregressive rollout failed at step {step}: {source}")]
    Rollout {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
