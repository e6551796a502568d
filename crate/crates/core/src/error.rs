//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Error`]. The variants are
//! grouped by failure class rather than by module so that callers (notably the
//! CLI, which maps failure classes to process exit codes) can match on intent:
//! configuration problems, I/O problems, and numerical problems are distinct.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A graph node or matrix operation was given incompatible shapes.
    #[error("shape mismatch in {op} (node {node}): {detail}")]
    ShapeMismatch {
        op: &'static str,
        node: usize,
        detail: String,
    },

    /// A forward evaluation produced NaN or infinity.
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    /// QR factorization met a (numerically) rank-deficient input.
    #[error("rank-deficient input: |R[{column},{column}]| <= {threshold:e} after factorization")]
    RankDeficient { column: usize, threshold: f64 },

    /// A matrix claimed to be a Stiefel point is not orthonormal.
    #[error("not orthonormal: ||X^T X - I||_F = {defect:e} exceeds tolerance {tolerance:e}")]
    NotOrthonormal { defect: f64, tolerance: f64 },

    /// A matrix claimed to lie in a tangent space does not.
    #[error("not tangent: ||X^T Z + Z^T X||_F = {defect:e} exceeds tolerance {tolerance:e}")]
    NotTangent { defect: f64, tolerance: f64 },

    /// An operation was asked to differentiate a node that only supports
    /// first-order (numeric) backward passes.
    #[error("op {op} does not support symbolic differentiation")]
    NoSymbolicGradient { op: &'static str },

    /// Unrolling a computation would exceed the configured graph size.
    #[error("graph node budget exceeded: {needed} nodes needed, budget is {budget}")]
    GraphBudget { needed: usize, budget: usize },

    /// A class label is outside the episode's label range.
    #[error("label {label} out of range for {n_way}-way episode")]
    LabelOutOfRange { label: usize, n_way: usize },

    /// A configuration value is missing, malformed, or out of range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A dataset could not be loaded or sampled from.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// A checkpoint file is malformed or of an unknown version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Filesystem failure, annotated with the offending path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Convenience constructor for I/O errors that keeps the path visible.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
