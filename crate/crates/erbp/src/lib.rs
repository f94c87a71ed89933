//! Neural-network laboratory for relational weight priors.
//!
//! The central idea: equality- and distance-based abstract patterns (ABA, ABB, ...)
//! are hard for standard networks to generalise out of distribution. A default
//! weight matrix `D` of pairwise +1/-1 comparison rows, enforced as an L1 or L2
//! penalty on the first-layer weights (ERBP), makes them learnable. The crate
//! also ships the fixed-weight RBP fusion baselines, synthetic pattern tasks,
//! sequence-prediction pipelines, and the experiment harness that ties them
//! together.

pub mod autodiff;
pub mod cli;
pub mod layers;
pub mod patterns;
pub mod prior;
pub mod rbp;
pub mod seqdata;
pub mod stats;
pub mod train;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context}: {left:?} vs {right:?}")]
    DimensionMismatch {
        context: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset generation failed: {0}")]
    Generation(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(context: impl Into<String>, left: &[usize], right: &[usize]) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
