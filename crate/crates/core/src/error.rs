use thiserror::Error;

/// Errors raised by the model, solvers and continuation drivers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("singular closed form: {0}")]
    Singularity(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("step size underflow at t = {t:.6e} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("newton iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("event localization failed: {0}")]
    Localization(String),

    #[error("ill-conditioned computation: {0}")]
    IllConditioned(String),

    #[error("linear system is singular")]
    SingularMatrix,

    #[error("continuation terminated: {0}")]
    Terminated(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
