use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("non-numeric cell at row {row}, column `{col}`")]
    NonNumericCell { row: usize, col: String },
    #[error("non-finite value at row {row}, column `{col}`")]
    NonFiniteValue { row: usize, col: String },
    #[error("file has no data rows")]
    EmptyFile,
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("empty vector")]
    EmptyVector,
    #[error("need at least {needed} samples with nonzero spread, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("k = {k} exceeds the number of training rows {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("need at least {needed} points for {needed} clusters, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("need at least {needed} residuals, got {got}")]
    TooFewResiduals { needed: usize, got: usize },
    #[error("density must be positive, got {0}")]
    NonpositiveDensity(f64),
    #[error("feature row has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty calibration set")]
    EmptyCalibration,
    #[error("empty test set")]
    EmptyTestSet,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-parsable code, one per error family.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) => "MISSING_COLUMN",
            Error::NonNumericCell { .. } => "NON_NUMERIC_CELL",
            Error::NonFiniteValue { .. } => "NON_FINITE_VALUE",
            Error::EmptyFile => "EMPTY_FILE",
            Error::TooFewRows { .. } => "TOO_FEW_ROWS",
            Error::EmptyVector => "EMPTY_VECTOR",
            Error::TooFewSamples { .. } => "TOO_FEW_SAMPLES",
            Error::KTooLarge { .. } => "K_TOO_LARGE",
            Error::TooFewPoints { .. } => "TOO_FEW_POINTS",
            Error::TooFewResiduals { .. } => "TOO_FEW_RESIDUALS",
            Error::NonpositiveDensity(_) => "NONPOSITIVE_DENSITY",
            Error::DimensionMismatch { .. } => "DIMENSION_MISMATCH",
            Error::EmptyCalibration => "EMPTY_CALIBRATION",
            Error::EmptyTestSet => "EMPTY_TEST_SET",
            Error::SchemaMismatch(_) => "SCHEMA_MISMATCH",
            Error::InvalidConfig(_) => "INVALID_CONFIG",
            Error::Io(_) => "IO_ERROR",
            Error::Csv(_) => "CSV_ERROR",
            Error::Json(_) => "JSON_ERROR",
        }
    }
}
