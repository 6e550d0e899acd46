use thiserror::Error;

use crate::mdp::ValidationReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP:\n{0}")]
    InvalidMdp(ValidationReport),
    #[error("policy does not match MDP dimensions: {0}")]
    PolicyMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no positive suboptimality gap: every gap is within tolerance of zero")]
    NoPositiveGap,
    #[error("transition record {record} (trajectory {traj}) out of range: {what}")]
    RecordOutOfRange {
        record: usize,
        traj: usize,
        what: String,
    },
    #[error("instance generation budget exhausted after {attempts} attempts")]
    GenerationBudget { attempts: usize },
    #[error("sample-size search budget exhausted: no passing N <= {cap}")]
    SearchBudget { cap: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code: 2 for validation/input errors, 3 for exhausted budgets.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::GenerationBudget { .. } | Error::SearchBudget { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
