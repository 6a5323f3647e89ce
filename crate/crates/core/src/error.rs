use alloc::string::String;

/// Everything that can go wrong in the core library.
///
/// Variants split into two families: validation errors (bad input or a
/// violated precondition, see [`Error::is_validation`]) and runtime errors
/// (numerical failure on valid input).
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("scaling matrix violates min a_j > 1: smallest eigenvalue real part is {min_real_part}")]
    SpectrumTooSmall { min_real_part: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("basis change is singular or ill-conditioned (condition number {condition:e})")]
    SingularBasis { condition: f64 },

    #[error("value out of representable range: {0}")]
    Range(String),

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("shell rejection sampling failed: acceptance rate {acceptance:e} is below 1e-4")]
    BoundingRadius { acceptance: f64 },

    #[error("rejection sampling exhausted {proposals} proposals")]
    RejectionExhausted { proposals: usize },

    #[error("covariance matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("Monte Carlo standard error {relative:.3} exceeds 20% of the estimate at h = {h}")]
    MonteCarloNoise { h: f64, relative: f64 },

    #[error("kernel is singular at grid node {node} (term {term})")]
    SingularKernel { node: usize, term: usize },

    #[error("not enough data: {0}")]
    InsufficientData(String),
}

impl Error {
    /// True for errors caused by the caller's input rather than by numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::SpectrumTooSmall { .. }
                | Error::InvalidInput(_)
                | Error::Precondition(_)
                | Error::Dimension { .. }
                | Error::SingularBasis { .. }
                | Error::InsufficientData(_)
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn precondition(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}
