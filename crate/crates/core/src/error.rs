use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
///
/// Variants are grouped by the stage that raises them; [`Error::class`]
/// exposes a stable category name used for exit codes and HTTP mapping.
#[derive(Debug, Error)]
pub enum Error {
    // ingestion
    #[error("path does not exist: {0}")]
    MissingPath(PathBuf),
    #[error("frames have mixed dimensions: {first:?} vs {other:?} ({path})")]
    MixedDimensions {
        first: (usize, usize),
        other: (usize, usize),
        path: String,
    },
    #[error("need at least two frames, found {0}")]
    FewerThanTwoFrames(usize),
    #[error("failed to decode image {path}: {reason}")]
    ImageDecode { path: String, reason: String },
    #[error("invalid manifest: {0}")]
    Manifest(String),

    // flow files
    #[error("bad .flo magic: {0}")]
    BadMagic(f32),
    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid dimensions {width}x{height}")]
    BadDimensions { width: i64, height: i64 },
    #[error("non-finite value encountered")]
    NonFiniteValues,

    // embedding container
    #[error("embedding header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("embedding dimension is zero")]
    DimZero,

    // features / providers
    #[error("feature side {0} is below the minimum of 4")]
    SideTooSmall(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("embedding provider not ready: {0}")]
    ProviderNotReady(String),
    #[error("index {index} out of range for {len} items")]
    IndexOutOfRange { index: usize, len: usize },

    // metric learning
    #[error("need at least three frames for triplets, found {0}")]
    TooFewFrames(usize),
    #[error("no valid triplets after dropping ties")]
    NoValidTriplets,
    #[error("invalid configuration: {0}")]
    BadParams(String),

    // graph / search
    #[error("embedding set is empty or has fewer than two vectors")]
    EmptyEmbeddings,
    #[error("graph with {n} nodes exceeds the configured cap of {cap}")]
    GraphTooLarge { n: usize, cap: usize },
    #[error("every node except the current one has been visited")]
    AllVisited,
    #[error("start frame {start} out of range for {n} frames")]
    StartOutOfRange { start: usize, n: usize },
    #[error("empty input")]
    EmptyInput,

    // evaluation
    #[error("path is too short: {0} frames")]
    PathTooShort(usize),
    #[error("path is empty")]
    EmptyPath,
    #[error("rating tally does not add up: {counted} ratings for {raters} raters")]
    TallyMismatch { counted: u64, raters: u64 },
    #[error("sequence references frame {index} but the dataset has {n} frames")]
    UniverseMismatch { index: usize, n: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable category used to derive exit codes and HTTP statuses.
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            MissingPath(_) | MixedDimensions { .. } | FewerThanTwoFrames(_) | ImageDecode { .. }
            | Manifest(_) => ErrorClass::Input,
            BadMagic(_) | TruncatedPayload { .. } | TrailingBytes(_) | BadDimensions { .. }
            | NonFiniteValues | HeaderMismatch(_) | DimZero => ErrorClass::Format,
            SideTooSmall(_) | BadParams(_) | DimensionMismatch(_) | ProviderNotReady(_) => {
                ErrorClass::Config
            }
            TooFewFrames(_) | NoValidTriplets => ErrorClass::Training,
            IndexOutOfRange { .. } | StartOutOfRange { .. } => ErrorClass::OutOfRange,
            EmptyEmbeddings | GraphTooLarge { .. } | AllVisited | EmptyInput => ErrorClass::Search,
            PathTooShort(_) | EmptyPath | TallyMismatch { .. } | UniverseMismatch { .. } => {
                ErrorClass::Evaluation
            }
            Io(_) | Json(_) => ErrorClass::Io,
        }
    }
}

/// Coarse error categories. The discriminants are the CLI exit codes and
/// must not be renumbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input = 2,
    Format = 3,
    Config = 4,
    Training = 5,
    OutOfRange = 6,
    Search = 7,
    Evaluation = 8,
    Io = 9,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        self as i32
    }
}
