//! Error type shared by every module of the crate.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, BongError>;

/// Typed failures raised by the library.
///
/// Numerical failures are never repaired silently: an update that would leave
/// the belief state outside its valid set returns one of these variants unless
/// the caller explicitly opted into jitter or variance clamping.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BongError {
    /// Operand dimensions do not agree.
    #[error("shape error: {0}")]
    ShapeError(String),
    /// A covariance (or precision) matrix could not be inverted.
    #[error("singular covariance: {0}")]
    SingularCovariance(String),
    /// A matrix that must be positive definite (or a variance that must be
    /// positive) failed validation.
    #[error("not positive definite: {0}")]
    NotPositiveDefinite(String),
    /// The small K×K system inside a Woodbury solve could not be factorized.
    #[error("singular inner system in low-rank solve")]
    SingularInnerSystem,
    /// The observation covariance could not be inverted even after jitter.
    #[error("singular observation covariance")]
    SingularObservationCov,
    /// A dense operation was requested on a problem larger than its cap.
    #[error("dimension {size} exceeds cap {cap}")]
    CapExceeded { size: usize, cap: usize },
    /// The estimator output cannot be consumed by the chosen family.
    #[error("estimator incompatible with family: {0}")]
    EstimatorIncompatible(String),
    /// The requested dynamics model is not available for the family.
    #[error("unsupported dynamics: {0}")]
    UnsupportedDynamics(String),
    /// A classification-only metric was requested on a regression task (or
    /// the other way round).
    #[error("task mismatch: {0}")]
    TaskMismatch(String),
    /// Every learning-rate trial failed or produced a non-finite score.
    #[error("all tuning trials failed")]
    AllTrialsFailed,
    /// An IDX file started with an unexpected magic number.
    #[error("bad IDX magic number {0:#010x}")]
    BadMagic(u32),
    /// An IDX file ended before its header said it would.
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    /// Image and label files disagree on the number of records.
    #[error("record count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    /// A configuration value is out of range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// File-system or serialization failure.
    #[error("i/o error: {0}")]
    Io(String),
    /// A failure inside the streaming loop, tagged with the 1-based step.
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<BongError>,
    },
}

impl BongError {
    /// Short class name, used for CLI diagnostics.
    pub fn class(&self) -> &'static str {
        match self {
            BongError::ShapeError(_) => "ShapeError",
            BongError::SingularCovariance(_) => "SingularCovariance",
            BongError::NotPositiveDefinite(_) => "NotPositiveDefinite",
            BongError::SingularInnerSystem => "SingularInnerSystem",
            BongError::SingularObservationCov => "SingularObservationCov",
            BongError::CapExceeded { .. } => "CapExceeded",
            BongError::EstimatorIncompatible(_) => "EstimatorIncompatible",
            BongError::UnsupportedDynamics(_) => "UnsupportedDynamics",
            BongError::TaskMismatch(_) => "TaskMismatch",
            BongError::AllTrialsFailed => "AllTrialsFailed",
            BongError::BadMagic(_) => "BadMagic",
            BongError::TruncatedFile(_) => "TruncatedFile",
            BongError::CountMismatch { .. } => "CountMismatch",
            BongError::InvalidConfig(_) => "InvalidConfig",
            BongError::Io(_) => "Io",
            BongError::AtStep { source, .. } => source.class(),
        }
    }

    /// Strip any step annotation and return the underlying error.
    pub fn root(&self) -> &BongError {
        match self {
            BongError::AtStep { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<std::io::Error> for BongError {
    fn from(e: std::io::Error) -> Self {
        BongError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for BongError {
    fn from(e: serde_json::Error) -> Self {
        BongError::Io(e.to_string())
    }
}

impl From<csv::Error> for BongError {
    fn from(e: csv::Error) -> Self {
        BongError::Io(e.to_string())
    }
}

/// Return a `ShapeError` unless `actual == expected`.
pub(crate) fn check_len(what: &str, actual: usize, expected: usize) -> Result<()> {
    if actual == expected {
        Ok(())
    } else {
        Err(BongError::ShapeError(format!("{what}: expected length {expected}, got {actual}")))
    }
}
