use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid metadata: {0}")]
    Metadata(String),

    #[error("frame {index} missing")]
    FrameMissing { index: usize },

    #[error("frame {index} is short: expected {expected} bytes, found {found}")]
    FrameShort {
        index: usize,
        expected: usize,
        found: usize,
    },

    #[error("video shorter than one second ({frames} frames at {fps} fps)")]
    TooShort { frames: usize, fps: u32 },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("grid cell ({row},{col}) is {width}x{height}, smaller than patch size {patch}")]
    CellTooSmall {
        row: usize,
        col: usize,
        width: usize,
        height: usize,
        patch: usize,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u16, found: u16 },

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("dim mismatch for source {source_name}: expected {expected}, found {found}")]
    DimMismatch {
        source_name: String,
        expected: usize,
        found: usize,
    },

    #[error("count mismatch for source {source_name}: expected {expected}, found {found}")]
    CountMismatch {
        source_name: String,
        expected: usize,
        found: usize,
    },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("missing feature sources: {}", .0.join(","))]
    MissingSources(Vec<String>),

    #[error("probability rows must sum to 1 (source {source_name}, row {row}, sum {sum})")]
    NotProbability {
        source_name: String,
        row: usize,
        sum: f64,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("layout mismatch: expected {expected}, found {found}")]
    LayoutMismatch { expected: String, found: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used by the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Metadata(_) => "metadata",
            Error::FrameMissing { .. } => "frame_missing",
            Error::FrameShort { .. } => "frame_short",
            Error::TooShort { .. } => "too_short",
            Error::Geometry(_) => "geometry",
            Error::CellTooSmall { .. } => "cell_too_small",
            Error::BadMagic { .. } => "bad_magic",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::Truncated(_) => "truncated",
            Error::DimMismatch { .. } => "dim_mismatch",
            Error::CountMismatch { .. } => "count_mismatch",
            Error::Checksum { .. } => "checksum",
            Error::MissingSources(_) => "missing_sources",
            Error::NotProbability { .. } => "not_probability",
            Error::NonFinite(_) => "non_finite",
            Error::Shape(_) => "shape",
            Error::InvalidInput(_) => "invalid_input",
            Error::ZeroVariance(_) => "zero_variance",
            Error::Fit(_) => "fit",
            Error::LayoutMismatch { .. } => "layout_mismatch",
            Error::Config(_) => "config",
            Error::Csv(_) => "csv",
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
