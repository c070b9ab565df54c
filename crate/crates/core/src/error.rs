use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("{0}")]
    Domain(String),

    /// Adaptive quadrature exhausted its panel budget before reaching the
    /// requested error target.
    #[error("target {target:e} not reached within {panels} panels (estimate {estimate:e})")]
    Quadrature {
        target: f64,
        estimate: f64,
        panels: usize,
    },

    /// A mathematical invariant was violated, usually because the increment
    /// variance is not a valid variogram.
    #[error("{0}")]
    Invariant(String),

    #[error("{0}")]
    Overflow(String),

    /// Malformed spec strings, config files or command lines.
    #[error("{0}")]
    Parse(String),

    #[error("{0}")]
    CovarianceInvalid(String),

    #[error("{0}")]
    UnsupportedRegime(String),

    /// Every Hermite coefficient past the constant term is numerically zero.
    #[error("k0 undefined: all coefficients a_2m with m>=1 are below {threshold:e}")]
    UndefinedK0 { threshold: f64 },

    #[error("{0}")]
    Alignment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category used in diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Quadrature { .. } => "quadrature",
            Error::Invariant(_) => "invariant",
            Error::Overflow(_) => "overflow",
            Error::Parse(_) => "usage",
            Error::CovarianceInvalid(_) => "covariance-invalid",
            Error::UnsupportedRegime(_) => "unsupported-regime",
            Error::UndefinedK0 { .. } => "domain",
            Error::Alignment(_) => "alignment",
            Error::Io(_) => "io",
            Error::Json(_) => "io",
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
