use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not line up.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A parameter (rank, sparsity, mode count, ...) is outside its valid range.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// An iterative numeric routine did not converge or produced non-finite values.
    #[error("numeric failure after {iterations} iterations: {msg}")]
    Numeric { msg: String, iterations: usize },

    /// Training produced a non-finite loss; carries the last good checkpoint.
    #[error("training diverged at epoch {epoch} (stage {stage}): {msg}")]
    Divergence {
        epoch: usize,
        stage: usize,
        msg: String,
        checkpoint: Option<Box<crate::langmodel::LanguageModel>>,
    },

    /// A token id is not part of the vocabulary.
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    /// Input data is empty where at least one element is required.
    #[error("empty input: {0}")]
    Empty(String),

    /// Invalid pipeline or training configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed model container.
    #[error("malformed model file: {0}")]
    Format(String),

    /// Container written by an incompatible format version.
    #[error("unsupported container version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    /// Stored checksum does not match the data.
    #[error("checksum mismatch for {0}")]
    Integrity(String),

    /// A compression step failed; carries the report of the steps before it.
    #[error("pipeline step {step} ({op}) failed: {source}")]
    Pipeline {
        step: usize,
        op: String,
        #[source]
        source: Box<Error>,
        report: Box<crate::pipeline::PipelineReport>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
