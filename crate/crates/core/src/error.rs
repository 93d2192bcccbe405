use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("zero dry weight")]
    ZeroDryWeight,
    #[error("missing nutrient `{0}`")]
    MissingNutrient(String),
    #[error("negative input: {0}")]
    Negative(f64),
    #[error("no overlap")]
    NoOverlap,
    #[error("degenerate data")]
    DegenerateData,
    #[error("degenerate ranks")]
    DegenerateRanks,
    #[error("constant input")]
    ConstantInput,
    #[error("labels contain a single class")]
    SingleClass,
    #[error("empty judgment set")]
    EmptyJudgments,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("class {class} has {count} rows, need at least {needed} to stratify")]
    TooSmallToStratify {
        class: String,
        count: usize,
        needed: usize,
    },
    #[error("row ids differ between feature blocks")]
    RowMismatch,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
