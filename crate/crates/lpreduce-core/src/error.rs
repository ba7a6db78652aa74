//! Error types shared across the engine.
//!
//! Every fallible operation returns [`Result`]. Variants carry enough context
//! (operator names, condition estimates, residuals) for a caller to report a
//! failure without re-running the computation.

use alloc::string::String;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Unified error type for the reduction engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// The Faddeev-Popov operator is singular (or numerically close to it) at
    /// the requested point, so the gauge slice is not transverse to the orbit
    /// there. `rcond` is a reciprocal condition estimate from the attempted
    /// factorization.
    #[error("gauge-fixing operator singular at the requested point (rcond ~ {rcond:.3e}): {context}")]
    GaugeSingular { rcond: f64, context: String },

    /// A matrix that must be symmetric positive definite (a metric block, the
    /// orbit metric, an orbit-space operator) failed its Cholesky
    /// factorization.
    #[error("matrix `{name}` is not positive definite")]
    NotPositiveDefinite { name: String },

    /// An iterative solve (Newton gauge fixing, implicit stages) failed to
    /// reach tolerance.
    #[error("no convergence after {iterations} iterations (last residual {residual:.3e}, tol {tol:.3e}): {context}")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        tol: f64,
        context: String,
    },

    /// A group coordinate vector lies outside the exponential chart domain
    /// (the Maurer-Cartan coefficient matrix is singular there).
    #[error("group coordinates outside the exponential chart domain (|a| = {norm:.6})")]
    ChartDomain { norm: f64 },

    /// Two independent evaluation pathways (closed-form vs finite-difference)
    /// disagreed beyond tolerance.
    #[error("independent pathways disagree for `{what}`: max deviation {max_err:.3e} exceeds {tol:.3e}")]
    FdInconsistent {
        what: String,
        max_err: f64,
        tol: f64,
    },

    /// A general linear operator required by the computation is singular.
    #[error("operator `{name}` is singular (rcond ~ {rcond:.3e})")]
    SingularOperator { name: String, rcond: f64 },

    /// A user-facing configuration value is invalid.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Mismatched dimensions between caller-supplied data and the system.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },
}
