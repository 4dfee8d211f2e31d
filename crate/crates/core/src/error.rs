use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("template error: {0}")]
    Template(String),

    #[error("mock script parse error at line {line}: {message}")]
    ScriptParse { line: usize, message: String },

    #[error("no scripted response for template `{template_id}` (alias {alias:?}, hash {hash})")]
    ScriptMiss {
        template_id: String,
        alias: Option<String>,
        hash: String,
    },

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{protocol} protocol error: {message}")]
    Protocol {
        protocol: &'static str,
        message: String,
    },

    #[error("window of {0} units exceeds the brute-force limit of 16")]
    Size(usize),

    #[error("projection needs at least {needed} vectors, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("decomposition is empty")]
    EmptyDecomposition,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("distributions have different bucket sets")]
    BucketMismatch,

    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn protocol(protocol: &'static str, message: impl Into<String>) -> Self {
        Error::Protocol {
            protocol,
            message: message.into(),
        }
    }

    pub fn is_protocol(&self) -> bool {
        matches!(self, Error::Protocol { .. })
    }
}
