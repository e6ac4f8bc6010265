use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can surface.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("ingestion error: duplicate doc_id `{0}`")]
    DuplicateDocId(String),

    #[error("malformed record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("template error: {0}")]
    Template(String),

    #[error("gateway error{}: {message}", if *.retryable { " (retryable)" } else { "" })]
    Gateway { message: String, retryable: bool },

    #[error("capability error: {0}")]
    Capability(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("all {failed} items of the batch failed; first failure: {first}")]
    Batch { failed: usize, first: Box<Error> },

    #[error("state error: {0}")]
    State(String),

    #[error("index build failed for doc_id `{doc_id}`: {source}")]
    IndexBuild {
        doc_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("group error: {0}")]
    Group(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Backend,
    Stage,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Gateway { .. } | Error::Capability(_) => ErrorKind::Backend,
            Error::Stage { source, .. } | Error::IndexBuild { source, .. } | Error::Batch { first: source, .. } => {
                match source.kind() {
                    ErrorKind::Backend => ErrorKind::Backend,
                    ErrorKind::Config => ErrorKind::Config,
                    ErrorKind::Stage => ErrorKind::Stage,
                }
            }
            _ => ErrorKind::Stage,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Gateway { retryable: true, .. })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn stage(stage: &'static str, source: Error) -> Self {
        Error::Stage { stage, source: Box::new(source) }
    }
}
