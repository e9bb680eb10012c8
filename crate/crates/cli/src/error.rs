use rsd_core::Error as CoreError;

/// Process exit status. The numeric values are a stable contract.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Success = 0,
    Config = 1,
    Validation = 2,
    Solver = 3,
    DesignInfeasible = 4,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ExitKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Config, message)
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self::config(format!("{}: {err}", path.display()))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let kind = match &e {
            CoreError::DimensionMismatch { .. }
            | CoreError::InvalidArgument(_)
            | CoreError::NotPositiveSemidefinite { .. }
            | CoreError::SensorNoiseNotPositiveDefinite { .. } => ExitKind::Config,
            CoreError::SingularStateMatrix { .. } | CoreError::PropertyViolated(_) => ExitKind::Validation,
            CoreError::NotObservable { .. }
            | CoreError::NotConverged { .. }
            | CoreError::NotInDomRic { .. }
            | CoreError::NotSchurStable { .. }
            | CoreError::Numerical(_)
            | CoreError::SimulationDiverged { .. } => ExitKind::Solver,
            CoreError::DesignInfeasible { .. } => ExitKind::DesignInfeasible,
        };
        Self::new(kind, e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
