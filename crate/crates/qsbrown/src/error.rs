use qsbrown_core::analysis::AnalysisError;
use qsbrown_core::catalog::CatalogError;
use qsbrown_core::linalg::LinalgError;
use qsbrown_core::measure::MeasureError;
use qsbrown_core::{ModelError, SimError};
use thiserror::Error;

/// Failures of a subcommand, mapped onto exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, unreadable or malformed input: exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Divergent integrals, indefinite covariance, too many failed paths:
    /// exit code 3.
    #[error("{0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::DivergentIntegral { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<LinalgError> for CliError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::Model(m) => m.into(),
            LinalgError::NotPositiveDefinite { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<MeasureError> for CliError {
    fn from(e: MeasureError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<CatalogError> for CliError {
    fn from(e: CatalogError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Model(m) => m.into(),
            SimError::Linalg(l) => l.into(),
            SimError::Measure(m) => m.into(),
            SimError::StepStuck { .. } | SimError::FailureRateExceeded { .. } => {
                CliError::Numeric(e.to_string())
            }
            SimError::InvalidConfig(_) | SimError::SupportViolation { .. } => {
                CliError::Usage(e.to_string())
            }
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Sim(s) => s.into(),
            AnalysisError::Measure(m) => m.into(),
            AnalysisError::Model(m) => m.into(),
            AnalysisError::Invalid(m) => CliError::Usage(m),
        }
    }
}
