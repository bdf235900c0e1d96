//! Networked side of the EMI pipeline: clients for OpenAI-compatible
//! chat-completions and embeddings endpoints, an on-disk response cache,
//! and a deterministic mock backend that speaks the same protocol.

pub mod cache;
pub mod config;
pub mod embed;
mod http;
pub mod mock;
pub mod rate;
pub mod wire;

use std::path::{Path, PathBuf};

pub use cache::DiskCache;
pub use config::EndpointConfig;
pub use embed::{build_anchor_vectors, embed_texts};
pub use http::Client;
pub use mock::{MockRules, MockServer};
pub use rate::{rate_segments, RateJob, RateOptions, RateOutput};

#[derive(Debug, thiserror::Error)]
pub enum RemoteError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] emi_core::Error),
    #[error("endpoint {url} unreachable after {attempts} attempt(s): {reason}; completed responses are cached, rerun to resume")]
    EndpointDown { url: String, attempts: u32, reason: String },
    #[error("{url}: {reason}")]
    Protocol { url: String, reason: String },
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("empty input at position {0}")]
    EmptyInput(usize),
}

impl RemoteError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        RemoteError::Io { path: path.to_path_buf(), source }
    }
}

pub type Result<T> = std::result::Result<T, RemoteError>;
