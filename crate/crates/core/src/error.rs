use thiserror::Error;

/// Errors raised by market construction, optimization and validation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FippError {
    #[error("{what} not PSD at (t={t}, y={y:?}) (min eigenvalue {min_eig:e})")]
    NotPsd {
        what: String,
        t: f64,
        y: Vec<f64>,
        min_eig: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("constraint set must contain the origin: {0}")]
    OriginNotInSet(String),

    #[error("constraint set is unbounded; construct with allow_unbounded for recession experiments")]
    Unbounded,

    #[error("unsupported constraint variant: {0}")]
    UnsupportedVariant(String),

    #[error("portfolio outside the budget set (1 + pi'u < 0 for atom {atom})")]
    NotInBudget { atom: usize },

    #[error("gradient undefined on the budget boundary (atom {atom})")]
    BoundaryGradient { atom: usize },

    #[error("supremum not attained: immediate arbitrage direction {witness:?}")]
    NotAttained { witness: Vec<f64> },

    #[error("optimizer hit {iterations} iterations (gap {gap:e}) at pi = {best:?}")]
    MaxIterations {
        best: Vec<f64>,
        value: f64,
        gap: f64,
        iterations: usize,
    },

    #[error("cholesky factorization of the joint covariance failed at (t={t}, y={y:?})")]
    Cholesky { t: f64, y: Vec<f64> },

    #[error("admissibility violated: 1 + pi'u = {factor} < 0 on path {path}, step {step}")]
    AdmissibilityViolation { path: usize, step: usize, factor: f64 },

    #[error("time-monotone mode requires finite-variation factor ({0})")]
    NotFiniteVariationFactor(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("not a Black-Scholes factor market: {0}")]
    NotBsFactor(String),

    #[error("numerical failure at (t={t}, y={y:?}): {msg}")]
    Numerical { t: f64, y: Vec<f64>, msg: String },

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, FippError>;
