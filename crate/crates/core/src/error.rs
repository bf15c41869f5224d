use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("covariance is not positive definite (eigenvalue {eigenvalue:e})")]
    SingularCovariance { eigenvalue: f64 },

    /// `lambda = 0` together with `theta = 1`: the ridgeless fixed point is undefined there.
    #[error("excluded boundary: lambda = 0 with aspect ratio {theta} = 1")]
    ExcludedBoundary { theta: f64 },

    #[error("fixed point did not converge, last bracket [{lo:e}, {hi:e}]")]
    NonConvergence { lo: f64, hi: f64 },

    #[error("divergent variance: vartheta = {vartheta} is at or beyond the interpolation threshold")]
    DivergentVariance { vartheta: f64 },

    #[error("out-of-bag error undefined: every observation is used by some member")]
    UndefinedOob,

    #[error("extrapolation undefined: k_hat at lambda ({k_lambda}) must exceed k_hat at zero ({k_zero})")]
    ExtrapolationUndefined { k_zero: usize, k_lambda: usize },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::InvalidData(msg.into())
    }
}
