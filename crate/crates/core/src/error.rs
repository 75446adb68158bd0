use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
///
/// Validation problems with a datum are *reported* (see
/// [`ValidationReport`](crate::datum::ValidationReport)) rather than raised;
/// the variants here cover operations that cannot produce a meaningful value.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BlError {
    #[error("malformed datum: {0}")]
    Malformed(String),
    #[error("datum violates precondition: {0}")]
    Precondition(String),
    #[error("C({m},{n}) = {count} subsets exceeds the enumeration cap of {cap}")]
    SubsetCap {
        m: usize,
        n: usize,
        count: u128,
        cap: u128,
    },
    #[error("matrix for factor {index} is not symmetric positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotSpd { index: usize, min_eigenvalue: f64 },
    #[error("aggregate matrix is numerically singular (smallest eigenvalue {min_eigenvalue:e})")]
    Singular { min_eigenvalue: f64 },
    #[error("grid function has zero total mass")]
    ZeroMass,
    #[error("product grid of {attempted} points exceeds the cap of {cap}")]
    GridCap { attempted: u128, cap: u128 },
    #[error("linear program failed: {0}")]
    Lp(String),
    #[error("optimizer hit the iteration cap ({iterations} iterations, residual {residual:e})")]
    IterationCap {
        iterations: usize,
        residual: f64,
        /// Last iterate, as `exp(x)`.
        lambda: Vec<f64>,
    },
}

pub type Result<T> = std::result::Result<T, BlError>;
