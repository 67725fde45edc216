use thiserror::Error;

/// Errors raised by structure evaluation, induction, residual generation and integration.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A smooth field produced a non-finite value.
    #[error("evaluation error in {what}: non-finite value at index {index}")]
    Evaluation { what: String, index: usize },

    /// Shapes or base points of the arguments do not agree.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A pointwise linear-algebra structure check failed (rank, isotropy, antisymmetry).
    #[error("structure error: {message} (numeric rank {rank}, expected {expected})")]
    Structure {
        message: String,
        rank: usize,
        expected: usize,
    },

    /// A constraint is not compatible with the structure it is applied to.
    #[error("constraint error: {0}")]
    Constraint(String),

    /// The vertical derivative of a Lagrangian could not be inverted.
    #[error("Lagrangian is not hyperregular at x = {x:?}, xi = {xi:?}: {reason}")]
    Hyperregularity {
        x: Vec<f64>,
        xi: Vec<f64>,
        reason: String,
    },

    /// The rate Jacobian of an implicit system is (numerically) singular.
    #[error("degenerate implicit dynamics at t = {t}, state = {state:?}; singular values {singular_values:?}")]
    Degenerate {
        t: f64,
        state: Vec<f64>,
        singular_values: Vec<f64>,
    },

    /// Newton iteration failed to converge.
    #[error("Newton iteration did not converge after {iterations} iterations (residual norm {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// Consistent initialization onto the algebraic channel failed.
    #[error("initialization error: {0}")]
    Initialization(String),

    /// An integration step failed.
    #[error("step {step} (t = {t}) failed: {source}")]
    Step {
        step: usize,
        t: f64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Returns an [`Error::Evaluation`] for the first non-finite entry, if any.
pub(crate) fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::Evaluation {
            what: what.to_string(),
            index,
        }),
        None => Ok(()),
    }
}
