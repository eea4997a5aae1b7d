use std::path::PathBuf;

use thiserror::Error;

use crate::regression::LassoFit;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("design column {0} is constant (standard deviation <= 1e-12)")]
    ConstantColumn(usize),
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("coordinate descent stopped after {} sweeps with max coefficient change {}", .0.iterations, .0.max_coef_delta_at_exit)]
    DidNotConverge(Box<LassoFit>),
    #[error("restricted Gram matrix is singular (smallest eigenvalue {min_eigenvalue:e})")]
    SingularGram { min_eigenvalue: f64 },
    #[error("stage {t}, action {action}: {source}")]
    AtStage {
        t: usize,
        action: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("stage {t}, action {action} has {count} samples (need at least {required})")]
    EmptyActionCell {
        action: usize,
        t: usize,
        count: usize,
        required: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("true support is empty")]
    EmptyTruth,
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("malformed input at row {row}: {message}")]
    MalformedInput { row: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short identifier, used in machine-readable error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ConstantColumn(_) => "ConstantColumn",
            Error::NonFiniteInput => "NonFiniteInput",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::DidNotConverge(_) => "DidNotConverge",
            Error::SingularGram { .. } => "SingularGram",
            Error::AtStage { source, .. } => source.code(),
            Error::EmptyActionCell { .. } => "EmptyActionCell",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::EmptyTruth => "EmptyTruth",
            Error::UnknownMetric(_) => "UnknownMetric",
            Error::MalformedInput { .. } => "MalformedInput",
            Error::Io { .. } => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }

    pub(crate) fn at_stage(self, t: usize, action: usize) -> Self {
        match self {
            e @ (Error::AtStage { .. } | Error::EmptyActionCell { .. }) => e,
            e => Error::AtStage {
                t,
                action,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
