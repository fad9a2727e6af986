use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the encoding, training and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("latitude {lat} rad is outside [-pi/2, pi/2]{}", row_suffix(*row))]
    LatOutOfRange { lat: f64, row: Option<usize> },

    #[error("coordinate is not finite: {0}")]
    NonFiniteCoordinate(f64),

    #[error("sphere radius must be positive, got {0}")]
    NonPositiveRadius(f64),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("loss is not finite")]
    NonFiniteLoss,

    #[error("invalid encoder spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("class id {class_id} is out of range for {num_classes} classes{}", row_suffix(*row))]
    ClassIdOutOfRange {
        class_id: usize,
        num_classes: usize,
        row: Option<usize>,
    },

    #[error("empty input")]
    EmptyInput,

    #[error("band width {0} deg does not divide 180")]
    BadBandWidth(f64),

    #[error("cell grids differ")]
    GridMismatch,

    #[error("bad grid: {0}")]
    BadGrid(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn row_suffix(row: Option<usize>) -> String {
    row.map(|r| format!(" (row {r})")).unwrap_or_default()
}

impl Error {
    /// Stable machine-readable code used by the CLI error line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::LatOutOfRange { .. } => "LAT_OUT_OF_RANGE",
            Error::NonFiniteCoordinate(_) => "NON_FINITE_COORDINATE",
            Error::NonPositiveRadius(_) => "NON_POSITIVE_RADIUS",
            Error::LengthMismatch { .. } => "LENGTH_MISMATCH",
            Error::ShapeMismatch(_) => "SHAPE_MISMATCH",
            Error::NonFiniteLoss => "NON_FINITE_LOSS",
            Error::InvalidSpec(_) => "INVALID_SPEC",
            Error::InvalidConfig(_) => "INVALID_CONFIG",
            Error::EmptyDataset => "EMPTY_DATASET",
            Error::ClassIdOutOfRange { .. } => "CLASS_ID_OUT_OF_RANGE",
            Error::EmptyInput => "EMPTY_INPUT",
            Error::BadBandWidth(_) => "BAD_BAND_WIDTH",
            Error::GridMismatch => "GRID_MISMATCH",
            Error::BadGrid(_) => "BAD_GRID",
            Error::Parse { .. } => "PARSE_ERROR",
            Error::Io { .. } => "IO_ERROR",
            Error::Usage(_) => "USAGE",
            Error::Json(_) => "JSON_ERROR",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
