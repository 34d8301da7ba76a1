use std::path::PathBuf;

use thiserror::Error;

use crate::model::ExamId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("hour bin {0} has no deltas after outlier filtering")]
    EmptyBin(usize),

    #[error("calibration failed: {0}")]
    CalibrationFailed(String),

    #[error("degenerate ROC anchors: {0}")]
    DegenerateAnchors(String),

    #[error("exam {0} is already on the worklist")]
    DuplicateExam(ExamId),

    #[error("worklist is empty")]
    EmptyWorklist,

    #[error("non-positive delta {0} drawn from distribution")]
    NonpositiveDelta(f64),

    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by the user's configuration rather than by
    /// input data or I/O.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::CalibrationFailed(_) | Error::DegenerateAnchors(_))
    }
}
