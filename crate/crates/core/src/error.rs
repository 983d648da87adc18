use std::path::PathBuf;

/// Errors produced across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("png decode error: {0}")]
    PngDecode(String),
    #[error("png encode error: {0}")]
    PngEncode(String),
    #[error("unsupported bit depth: {0} (expected 8)")]
    UnsupportedBitDepth(u8),
    #[error("unsupported color type {0} (expected single-channel grayscale)")]
    UnsupportedColor(String),
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("tile size {tile} does not divide a {width}x{height} image")]
    InvalidTileSize {
        tile: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("incompatible binning: {0}")]
    IncompatibleBinning(String),
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("statistic undefined: {0}")]
    Undefined(&'static str),
    #[error("feature dimension mismatch: {0} vs {1}")]
    FeatureDimension(usize, usize),
    #[error("matrix square root did not converge")]
    NonConvergence,
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("too many excluded letters: {0} (limit 7)")]
    TooManyExcluded(usize),
    #[error("missing calibration: {0}")]
    MissingCalibration(String),
    #[error("unknown som name: {0}")]
    UnknownSom(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv parse error at line {line}: {message}")]
    Csv { line: usize, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
