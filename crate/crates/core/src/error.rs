use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad IDX magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { expected: u32, found: u32 },

    #[error("image count {images} does not match label count {labels}")]
    LengthMismatch { images: usize, labels: usize },

    #[error("file truncated: {0}")]
    TruncatedFile(String),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("mixed image dimensions: expected {expected:?}, found {found:?} in {file}")]
    MixedDimensions {
        expected: (usize, usize),
        found: (usize, usize),
        file: String,
    },

    #[error("no label for {0}")]
    MissingLabel(String),

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("genome length {len} is not a positive multiple of {bits_per_gene} bits within {max_len} genes")]
    BadLength {
        len: usize,
        bits_per_gene: usize,
        max_len: usize,
    },

    #[error("genome contains a non-binary character {0:?}")]
    BadGenomeChar(char),

    #[error("{0:?} cannot be encoded by the {1}-bit codec")]
    UnencodableOp(crate::ipt::IptKind, usize),

    #[error("{seeds} heuristic seeds exceed population size {population}")]
    TooManySeeds { seeds: usize, population: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("only {found} adversarial samples survived filtering, {required} required")]
    InsufficientSamples { found: usize, required: usize },

    #[error("model file: {0}")]
    BadModel(String),

    #[error("schema mismatch: expected {expected}, found {found}")]
    SchemaMismatch { expected: String, found: String },

    #[error("empty detector pool")]
    EmptyPool,

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
