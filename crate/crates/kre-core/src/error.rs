use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the engine and its file loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {message}")]
    InvalidParams {
        field: &'static str,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("metric is not positive semidefinite: quadratic form {value:e} for pair ({row}, {col})")]
    NonPsdMetric { value: f64, row: usize, col: usize },

    #[error("k = {k} is too large for {n} items")]
    KTooLarge { k: usize, n: usize },

    #[error("gallery is empty: all {n_total} items are probes")]
    EmptyGallery { n_total: usize },

    #[error("item count {n} exceeds cap {cap}; raise KRE_MAX_ITEMS or RerankOptions::max_items")]
    TooManyItems { n: usize, cap: usize },

    #[error("labels do not match results: {0}")]
    LabelMismatch(String),

    #[error("non-finite value at row {row}")]
    NonFiniteValue { row: usize },

    #[error("matrix is not square: {rows} rows x {cols} columns")]
    NotSquare { rows: usize, cols: usize },

    #[error("asymmetric distance matrix: |d[{i}][{j}] - d[{j}][{i}]| = {delta:e} exceeds tolerance")]
    Asymmetric { i: usize, j: usize, delta: f64 },

    #[error("invalid distance {value} at ({row}, {col}); distances must be finite and non-negative")]
    InvalidDistance { row: usize, col: usize, value: f64 },

    #[error("bad magic bytes: not a KRF1 feature file")]
    BadMagic,

    #[error("truncated or oversized file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgs(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
