//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A numeric precondition was violated (non-positive length, invalid radii, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Array dimensions do not match the operation's contract.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Geometry that admits no effective-distance mapping (z1 = 0 and the like).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// An algorithm needs more input frames than were provided.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Iterative objective became non-finite; carries the last finite iterate.
    #[error("non-finite objective at iteration {iter}")]
    Divergence {
        iter: usize,
        last: Box<crate::retrieval::RetrievalResult>,
    },

    /// Data quality gate failed (degenerate flat-field pixels, tiny overlap, ...).
    #[error("quality error: {0}")]
    Quality(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Manifest could not be parsed; message carries line/field diagnostics.
    #[error("manifest parse error: {0}")]
    ManifestParse(String),

    /// Manifest references files that are not on disk.
    #[error("incomplete dataset: {} file(s) missing, first: {}", missing.len(), missing.first().map(|p| p.display().to_string()).unwrap_or_default())]
    IncompleteDataset { missing: Vec<PathBuf> },

    /// Encoded image payload does not match the declared dimensions.
    #[error("corrupt image payload: {0}")]
    CorruptPayload(String),

    /// A command template is missing a required placeholder.
    #[error("template error: {0}")]
    Template(String),

    /// Aggregate of per-projection task failures; successful indices completed.
    #[error("{} projection task(s) failed, first at index {}", failures.len(), failures.first().map(|f| f.0).unwrap_or(0))]
    ProjectionTasks { failures: Vec<(usize, String)> },
}
