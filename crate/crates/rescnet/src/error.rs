use thiserror::Error;

/// Crate-wide error type. Variants map onto the failure classes the
/// library reports: shape problems, bad input data, numerical breakdown
/// and malformed files.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("singular system: {0}")]
    Singular(String),

    /// Malformed or inconsistent on-disk data (bad magic, truncated file,
    /// record-count mismatch).
    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("domain error: {0}")]
    Domain(String),

    /// Stacked-LDA filter search exhausted its attempt budget without
    /// finding a separable sample.
    #[error("no separable sample found for filter {filter_index} after {attempts} attempts")]
    NonSeparable { filter_index: usize, attempts: usize },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid config: {0}")]
    Config(String),

    /// The file is not a checkpoint at all (wrong magic tag).
    #[error("not a checkpoint file: {0}")]
    Magic(String),

    #[error("unsupported checkpoint version {0}")]
    Version(u32),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
