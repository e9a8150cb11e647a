use spatial_sdr::SdrError;
use thiserror::Error;

/// A failed command. The variant decides the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{stage}: {message}")]
    Input { stage: &'static str, message: String },
    #[error("{stage}: {message}")]
    Numerical { stage: &'static str, message: String },
}

impl CliError {
    pub fn input(stage: &'static str, message: impl Into<String>) -> Self {
        Self::Input {
            stage,
            message: message.into(),
        }
    }

    pub fn numerical(stage: &'static str, message: impl Into<String>) -> Self {
        Self::Numerical {
            stage,
            message: message.into(),
        }
    }

    /// Maps a library error onto input (bad data or flags) or numerical
    /// failure.
    pub fn from_sdr(stage: &'static str, err: SdrError) -> Self {
        use SdrError::*;
        match err {
            DuplicatePoints(..)
            | NonFiniteCoordinate(_)
            | NonPositiveLambda(_)
            | IsolatedPoint(..)
            | ConstantResponse
            | OutOfSliceRange(_)
            | RankOutOfRange { .. }
            | EmptyGrid
            | InvalidGridValue(_)
            | EmptyReference
            | DegenerateGrid(_)
            | DimensionMismatch(_)
            | InsufficientSamples(_)
            | InvalidConfig(_) => Self::input(stage, err.to_string()),
            _ => Self::numerical(stage, err.to_string()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input { .. } => 2,
            Self::Numerical { .. } => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches a stage name to library results.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T> Stage<T> for spatial_sdr::Result<T> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError::from_sdr(stage, e))
    }
}
