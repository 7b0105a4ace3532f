//! Error types shared across the solver modules.

use thiserror::Error;

/// Errors raised by model construction, discretization, and the solvers.
#[derive(Debug, Error)]
pub enum SolverError {
    /// A user-supplied callback or expression produced NaN/inf.
    #[error("non-finite value at x=({x:.6}, {xy:.6}), t={t:.6}, y={y:.6}")]
    NonFiniteEval { x: f64, xy: f64, t: f64, y: f64 },

    /// Invalid coefficient data (e.g. a(x) < 0, empty control region).
    #[error("invalid coefficient: {0}")]
    InvalidCoefficient(String),

    /// Closed-form constants exist only for the built-in nonlinearity
    /// families; custom nonlinearities must supply them explicitly.
    #[error("closed-form constants are only available for built-in nonlinearity families")]
    UnsupportedFamily,

    /// A probe or solver precondition does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Newton failed on one implicit-Euler step.
    #[error("Newton did not converge at time step {step} after {iters} iterations (residual {residual:.3e})")]
    NewtonFailure {
        step: usize,
        iters: usize,
        residual: f64,
    },

    /// The state left the blow-up guard region.
    #[error("state blow-up at time step {step}: max |y| = {max_abs:.3e}")]
    Divergence { step: usize, max_abs: f64 },

    /// Generic numerical failure (iteration limits, singular systems).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Mismatched vector/trajectory shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Expression parse error with byte offset into the source string.
    #[error("expression error at byte {at}: {message}")]
    Expr { at: usize, message: String },

    /// Configuration field with an invalid value.
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    /// The outer optimization loop failed.
    #[error("optimizer failed: {0}")]
    Optimizer(String),
}

pub type Result<T> = std::result::Result<T, SolverError>;
