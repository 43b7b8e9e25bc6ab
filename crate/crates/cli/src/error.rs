use std::path::PathBuf;

use tasktransfer::adaptation::{AdaptationError, CsvError};
use tasktransfer::instructions::InstructionError;
use tasktransfer::learner::{LearnerError, SnapshotError};
use tasktransfer::transfer::TransferError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    Missing(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{} already exists; pass --force to overwrite", .0.display())]
    Exists(PathBuf),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Degenerate(_) => 4,
            CliError::Numeric(_) => 5,
            CliError::Exists(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<InstructionError> for CliError {
    fn from(e: InstructionError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<LearnerError> for CliError {
    fn from(e: LearnerError) -> Self {
        match e {
            LearnerError::NonFiniteLoss => CliError::Numeric(e.to_string()),
            LearnerError::InitMismatch(_) => CliError::Missing(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<AdaptationError> for CliError {
    fn from(e: AdaptationError) -> Self {
        match e {
            AdaptationError::InvalidPlan(m) => CliError::Config(m),
            AdaptationError::NoPoliciesConverged(_) | AdaptationError::NoSamples => CliError::Degenerate(e.to_string()),
            AdaptationError::Learner(l) => l.into(),
        }
    }
}

impl From<TransferError> for CliError {
    fn from(e: TransferError) -> Self {
        match e {
            TransferError::DegenerateDataset(_) => CliError::Degenerate(e.to_string()),
            TransferError::NonFiniteLoss => CliError::Numeric(e.to_string()),
            TransferError::InvalidInput(_) => CliError::Config(e.to_string()),
            TransferError::Io(_) | TransferError::CorruptModel(_) | TransferError::VersionMismatch { .. } => {
                CliError::Missing(e.to_string())
            }
        }
    }
}

impl From<SnapshotError> for CliError {
    fn from(e: SnapshotError) -> Self {
        CliError::Missing(e.to_string())
    }
}

impl From<CsvError> for CliError {
    fn from(e: CsvError) -> Self {
        CliError::Missing(format!("unreadable artifact: {e}"))
    }
}
