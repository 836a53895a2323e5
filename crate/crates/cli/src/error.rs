use std::path::PathBuf;

use robust_boost::Error as CoreError;
use serde_json::{json, Value};
use thiserror::Error;

/// Problems with a CSV dataset; lines are 1-based and count the header.
#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("line {line}: {message}")]
    ParseError { line: u64, message: String },

    #[error("line {line}: label {label} is outside 1..={k}")]
    LabelOutOfRange { line: u64, label: i64, k: usize },

    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: u64, expected: usize, found: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum ArchiveError {
    #[error("archive format version {found} is not supported (this build reads version {supported})")]
    VersionMismatch { found: u64, supported: u64 },

    #[error("corrupt model archive: {0}")]
    CorruptArchive(String),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {source}", path.display())]
    Data { path: PathBuf, source: DataError },

    #[error("{}: {source}", path.display())]
    Archive { path: PathBuf, source: ArchiveError },

    #[error("{pipeline} failed while {stage}: {source}")]
    Pipeline {
        pipeline: &'static str,
        stage: &'static str,
        source: CoreError,
    },

    #[error("audit found {} mismatching values: {}", .0.len(), .0.join(", "))]
    AuditMismatch(Vec<String>),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 2 for bad input, 3 when the weak learner cannot reach its edge, 4 for
    /// numeric failures, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Data { .. } | CliError::Archive { .. } => 2,
            CliError::Io { .. } | CliError::AuditMismatch(_) => 1,
            CliError::Pipeline { source, .. } => match source {
                CoreError::WeakLearnerFailed { .. } => 3,
                CoreError::NonFiniteLoss | CoreError::NonFiniteParameters { .. } | CoreError::OutOfDomain(_) => 4,
                _ => 2,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Data { source, .. } => match source {
                DataError::ParseError { .. } => "parse-error",
                DataError::LabelOutOfRange { .. } => "label-out-of-range",
                DataError::RaggedRow { .. } => "ragged-row",
            },
            CliError::Archive { source, .. } => match source {
                ArchiveError::VersionMismatch { .. } => "version-mismatch",
                ArchiveError::CorruptArchive(_) => "corrupt-archive",
            },
            CliError::Pipeline { source, .. } => match source {
                CoreError::WeakLearnerFailed { .. } => "weak-learner-failed",
                CoreError::NonFiniteLoss => "non-finite-loss",
                CoreError::NonFiniteParameters { .. } => "non-finite-parameters",
                CoreError::OutOfDomain(_) => "out-of-domain",
                _ => "invalid-input",
            },
            CliError::AuditMismatch(_) => "audit-mismatch",
        }
    }

    /// The one-line JSON record written to stderr.
    pub fn record(&self) -> Value {
        let mut record = json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        if let CliError::Data { path, source } = self {
            record["path"] = json!(path.display().to_string());
            record["line"] = json!(match source {
                DataError::ParseError { line, .. } | DataError::LabelOutOfRange { line, .. } | DataError::RaggedRow { line, .. } => line,
            });
        }
        if let CliError::Pipeline { pipeline, stage, source } = self {
            record["pipeline"] = json!(pipeline);
            record["stage"] = json!(stage);
            match source {
                CoreError::WeakLearnerFailed { round, achieved, .. } => {
                    record["round"] = json!(round);
                    record["achieved"] = json!(achieved);
                }
                CoreError::NonFiniteParameters { stage, epoch, .. } => {
                    record["training_stage"] = json!(stage);
                    record["epoch"] = json!(epoch);
                }
                _ => {}
            }
        }
        record
    }
}

/// Attaches pipeline context to library errors.
pub trait Context<T> {
    fn context(self, pipeline: &'static str, stage: &'static str) -> Result<T, CliError>;
}

impl<T> Context<T> for robust_boost::Result<T> {
    fn context(self, pipeline: &'static str, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Pipeline { pipeline, stage, source })
    }
}
