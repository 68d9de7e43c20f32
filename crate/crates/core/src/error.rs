use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("batch-norm in train mode needs at least 2 rows, got {0}")]
    BatchSize(usize),
    #[error("no gradient defined for {0}")]
    UnsupportedGradient(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("pipeline order violated: {0}")]
    Pipeline(String),
    #[error("batch sampling: {0}")]
    Sampling(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("code encoding: {0}")]
    Encoding(String),
    #[error("metric: {0}")]
    Metric(String),
    #[error("retrieval: {0}")]
    Retrieval(String),
    #[error("policy: {0}")]
    Policy(String),
    #[error("evaluation: {0}")]
    Evaluation(String),
    #[error("budget {budget} is below the stage-1 floor {floor}")]
    InfeasibleBudget { budget: f64, floor: f64 },
    #[error("missing artifact {} ({hint})", path.display())]
    MissingArtifact { path: PathBuf, hint: String },
    #[error("malformed file {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("dataset: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
