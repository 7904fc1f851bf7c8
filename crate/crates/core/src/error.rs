use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: required column `{column}` is missing")]
    Schema { column: String },

    #[error("row {row}, column `{column}`: cannot parse {value:?}")]
    Cell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("duplicate stay_id `{0}`")]
    DuplicateStay(String),

    #[error("labeling error for stay `{stay_id}`: {reason}")]
    Label { stay_id: String, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("imputation error: feature `{feature}` is observed in {observed} training rows, need at least {k}")]
    Imputation {
        feature: String,
        observed: usize,
        k: usize,
    },

    #[error("validation error: flag `{feature}` has value {value} outside [0, 1] (row {row})")]
    FlagRange {
        feature: String,
        row: usize,
        value: f64,
    },

    #[error("selection error: {0}")]
    Selection(String),

    #[error(
        "coordinate descent did not converge at lambda={lambda:e} (final max delta {delta:e})"
    )]
    LassoNonConvergence { lambda: f64, delta: f64 },

    #[error("balancing error: minority class has {minority} rows, need more than k_neighbors={k}; use a smaller k")]
    Balance { minority: usize, k: usize },

    #[error("split error: {0}")]
    Split(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("{family} did not converge after {iterations} iterations; the data may be separable, add regularization")]
    NotConverged { family: String, iterations: usize },

    #[error("training diverged (non-finite loss at epoch {epoch}); use a smaller learning rate")]
    Divergence { epoch: usize },

    #[error("scoring error: {0}")]
    Scoring(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("capacity error: {features} features exceed the exact-enumeration limit of {max}; 2^n coalitions is infeasible")]
    Capacity { features: usize, max: usize },

    #[error("degenerate feature `{0}`: it is constant")]
    DegenerateFeature(String),

    #[error("synthetic spec error: {0}")]
    Spec(String),

    #[error("tuning failed at grid point {point}: {source}")]
    Tuning {
        point: String,
        #[source]
        source: Box<Error>,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("missing upstream artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("model format version {0} is not supported")]
    UnsupportedVersion(u32),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::UnsupportedVersion(_) => ErrorClass::Config,
            Error::LassoNonConvergence { .. }
            | Error::NotConverged { .. }
            | Error::Divergence { .. } => ErrorClass::Numeric,
            Error::Tuning { source, .. } | Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}
