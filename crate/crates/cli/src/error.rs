use std::fmt;
use std::process::ExitCode;

use limforge::annotations::AnnotationError;
use limforge::morphometry::MorphometryError;
use limforge::nn_kernels::KernelError;
use limforge::pyramid_advisor::AdvisorError;
use limforge::rf_engine::RfError;
use limforge::tiler::TileError;

/// Failure classes, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or unreadable / invalid input files (exit 2).
    Input(String),
    /// A verification run found a violated check (exit 3).
    Verification(String),
    /// Anything else (exit 4).
    Internal(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        CliError::Internal(msg.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Input(_) => 2,
            CliError::Verification(_) => 3,
            CliError::Internal(_) => 4,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<AnnotationError> for CliError {
    fn from(e: AnnotationError) -> Self {
        match e {
            AnnotationError::Aggregate(errs) => {
                let lines: Vec<String> = errs.iter().map(|e| format!("  {e}")).collect();
                CliError::Input(format!("{} annotation files failed:\n{}", errs.len(), lines.join("\n")))
            }
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<MorphometryError> for CliError {
    fn from(e: MorphometryError) -> Self {
        match e {
            MorphometryError::EmptyCorpus => CliError::Input("empty corpus".into()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<RfError> for CliError {
    fn from(e: RfError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<AdvisorError> for CliError {
    fn from(e: AdvisorError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TileError> for CliError {
    fn from(e: TileError) -> Self {
        match e {
            TileError::Io(_) | TileError::Json(_) => CliError::Internal(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        CliError::Internal(e.to_string())
    }
}
