use thiserror::Error;

/// Errors shared across the engine, models, strategies and the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("non-finite gradient for parameter `{name}`; optimizer step aborted")]
    NonFiniteGradient { name: String },

    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),

    #[error("unknown parameter id {0}")]
    UnknownParam(usize),

    #[error("backward seed must be a scalar recorded on this tape")]
    BadSeed,

    #[error("entropy strategy requires class posteriors; regression tasks expose none")]
    EntropyNeedsPosteriors,

    #[error("sorter sequence length is {expected} but got {got} values")]
    SequenceLength { expected: usize, got: usize },

    #[error("pairwise ranking loss needs an even batch size, got {0}")]
    OddBatch(usize),

    #[error("sorter training diverged: {0}")]
    Diverged(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("csv error at line {line}: {detail}")]
    Csv { line: usize, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
