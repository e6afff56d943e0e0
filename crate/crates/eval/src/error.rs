use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("confusion matrix is empty (total = 0)")]
    EmptyConfusion,

    #[error("invalid annotation matrix: {0}")]
    InvalidAnnotations(String),

    #[error("class {0} absent from split {1}")]
    MissingClass(&'static str, &'static str),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("invalid run record at row {row}: {reason}")]
    InvalidRun { row: usize, reason: String },

    #[error("unbalanced factorial design: {0}")]
    UnbalancedDesign(String),

    #[error("duplicate run for configuration: {0}")]
    DuplicateRun(String),

    #[error("no runs supplied")]
    NoRuns,

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
