//! File formats and remote ingestion: corpus JSONL, the binary embedding
//! matrix format, run outputs and the run configuration.

mod config;
mod corpus;
mod embeddings;
mod outputs;

pub use config::{EmbeddingSource, MergeSettings, RoleSettings, RunConfig};
pub use corpus::load_corpus;
pub use embeddings::{
    fetch_embeddings, load_embeddings, load_or_fetch_embeddings, save_embeddings,
};
pub use outputs::{
    read_clusters_jsonl, read_iterations_csv, write_clusters_jsonl, write_iterations_csv,
    write_report_json,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}:{line}: parse error: {reason}")]
    ParseError {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("duplicate sentence id {id} at {path}:{line}")]
    DuplicateId {
        path: String,
        line: usize,
        id: String,
    },
    #[error("bad embedding file {path}: {reason}")]
    BadEmbeddingFile { path: String, reason: String },
    #[error("embedding shape mismatch: file has {rows} rows, corpus has {expected}")]
    ShapeMismatch { rows: usize, expected: usize },
    #[error("embedding endpoint unavailable after {attempts} attempts: {reason}")]
    EndpointUnavailable { attempts: u32, reason: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io error on {path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl IoError {
    pub(crate) fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        IoError::File {
            path: path.display().to_string(),
            source,
        }
    }
}
