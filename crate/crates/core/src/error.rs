use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid problem: {0}")]
    InvalidSpec(String),

    #[error("communication graph is disconnected")]
    Disconnected,

    #[error("zero matrix has no positive singular values")]
    ZeroMatrix,

    #[error("non-finite value at iteration {iteration} (step size {step} too large?)")]
    Divergence { iteration: usize, step: f64 },

    #[error("constraints are infeasible (phase-one residual {0:.3e})")]
    Infeasible(f64),

    #[error("objective of agent {0} is not quadratic; enable the iterative fallback")]
    NonQuadratic(usize),

    #[error("active-set solver did not terminate within {0} iterations")]
    NoConvergence(usize),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            found,
        }
    }
}
