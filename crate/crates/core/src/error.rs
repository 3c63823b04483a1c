use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error in {func}: {msg}")]
    Domain { func: &'static str, msg: String },

    #[error("dimension mismatch in {func}: {msg}")]
    DimensionMismatch { func: &'static str, msg: String },

    #[error("invalid parameter {name}: {msg}")]
    InvalidParam { name: &'static str, msg: String },

    #[error("empty corpus: no documents survive preprocessing")]
    EmptyCorpus,

    #[error("internal consistency violation: {0}")]
    Inconsistency(String),

    #[error("degenerate input in {func}: {msg}")]
    Degenerate { func: &'static str, msg: String },

    #[error("schema mismatch: expected {expected} v{expected_version}, found {found} v{found_version}")]
    Schema {
        expected: String,
        expected_version: u32,
        found: String,
        found_version: u32,
    },

    #[error("corrupt file {path}: {msg}")]
    CorruptFile { path: String, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("word {word} (id {word_id}) cannot be emitted by any topic")]
    UnemittableWord { word: String, word_id: usize },

    #[error("coverage time is infinite: topic {topic} has probability 0")]
    InfiniteCoverage { topic: usize },

    #[error("non-finite value in {context}: {msg}")]
    NonFinite { context: &'static str, msg: String },
}

impl Error {
    pub(crate) fn domain(func: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain { func, msg: msg.into() }
    }

    pub(crate) fn dims(func: &'static str, msg: impl Into<String>) -> Self {
        Error::DimensionMismatch { func, msg: msg.into() }
    }

    pub(crate) fn param(name: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidParam { name, msg: msg.into() }
    }

    pub(crate) fn degenerate(func: &'static str, msg: impl Into<String>) -> Self {
        Error::Degenerate { func, msg: msg.into() }
    }
}
