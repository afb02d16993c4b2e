use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// The CLI maps [`Error::is_numerical`] failures to exit code 2 and
/// everything else to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid subsystem index {index} (system has {count} subsystems)")]
    InvalidSubsystem { index: usize, count: usize },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("matrix is not unitary (deviation {0:e})")]
    NotUnitary(f64),

    #[error("negative eigenvalue {0:e} beyond tolerance")]
    NegativeEigenvalue(f64),

    #[error("linear solve did not converge: relative residual {residual:e} after {iterations} iterations")]
    SolveFailed { residual: f64, iterations: usize },

    #[error("propagation failed at step {step}: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error [{section}] line {line}: {message}")]
    Config {
        section: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Data { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SolveFailed { .. } | Error::StepFailed { .. } | Error::NegativeEigenvalue(_)
        )
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
