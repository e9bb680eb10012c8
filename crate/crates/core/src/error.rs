use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("{what} must be symmetric positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { what: String, min_eigenvalue: f64 },

    #[error("noise covariance of sensor `{label}` is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    SensorNoiseNotPositiveDefinite { label: String, min_eigenvalue: f64 },

    #[error("state matrix A is singular (condition number {condition:e})")]
    SingularStateMatrix { condition: f64 },

    #[error("pair (A, C) is not observable: observability rank {rank} < {n}")]
    NotObservable { rank: usize, n: usize },

    #[error("fixed-point iteration did not converge in {iterations} iterations (last step {last_step:e})")]
    NotConverged { iterations: usize, last_step: f64 },

    #[error("symplectic matrix not in dom(Ric): {reason}")]
    NotInDomRic { reason: String },

    #[error("matrix is not Schur stable (spectral radius {spectral_radius})")]
    NotSchurStable { spectral_radius: f64 },

    #[error("model assumption violated: {0}")]
    PropertyViolated(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("semidefinite subproblem infeasible at design iteration {iteration}; try a larger norm bound or a different initial output matrix")]
    DesignInfeasible { iteration: usize },

    #[error("simulation diverged at step {step} (covariance norm {norm:e}); check the model assumptions")]
    SimulationDiverged { step: usize, norm: f64 },
}

impl Error {
    pub(crate) fn dims(context: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
