use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised while decoding a `.slkr` scan file.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}, expected \"SLKR\"")]
    BadMagic([u8; 4]),
    #[error("unsupported scan format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated scan file: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid field: {0}")]
    Field(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("scan format: {0}")]
    Format(#[from] FormatError),
    #[error("degenerate world: {0}")]
    DegenerateWorld(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("training diverged in {stage} at epoch {epoch}: {detail}")]
    Divergence { stage: &'static str, epoch: usize, detail: String },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("budget parity violated for {method}: k = {k}, SLACK k = {reference}")]
    BudgetParity { method: String, k: usize, reference: usize },
    #[error("missing {stage} checkpoint at {}", path.display())]
    MissingDependency { stage: String, path: PathBuf },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
