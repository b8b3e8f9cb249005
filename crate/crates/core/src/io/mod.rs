//! Datasets, checkpoints, projection matrices, run configs and metrics on disk.

mod checkpoint;
mod dataset;
mod kv;
mod metrics;
mod synthetic;

pub use checkpoint::{
    decode_pmat, decode_pvec, encode_pmat, encode_pvec, load_pmat, load_pvec, save_pmat, save_pvec, PMAT_MAGIC,
    PMAT_TOLERANCE, PVEC_MAGIC,
};
pub use dataset::{load_dataset, parse_dataset, save_dataset, Dataset};
pub use kv::KvConfig;
pub use metrics::{read_records, summaries, MetricsWriter, Record};
pub use synthetic::{gen_synthetic, SyntheticTask, SyntheticTaskSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("truncated file while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("bad shape: {0}")]
    Shape(String),
    #[error("projection matrix is not orthonormal (defect {0:e})")]
    NotOrthonormal(f64),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("metrics: {0}")]
    Metrics(String),
}

pub(crate) fn with_path<T>(path: &std::path::Path, r: std::io::Result<T>) -> Result<T, IoError> {
    r.map_err(|source| IoError::File { path: path.display().to_string(), source })
}
