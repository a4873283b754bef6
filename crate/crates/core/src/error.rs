use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {dim} is {actual}, expected {expected}")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: {dim} extent {extent} minus kernel {kernel} is not divisible by stride {stride}")]
    Indivisible {
        op: &'static str,
        dim: &'static str,
        extent: usize,
        kernel: usize,
        stride: usize,
    },

    #[error("{op}: kernel {kernel} does not fit in {dim} extent {extent}")]
    KernelTooLarge {
        op: &'static str,
        dim: &'static str,
        extent: usize,
        kernel: usize,
    },

    #[error("invalid shape {0:?}: every dimension must be at least 1")]
    InvalidShape([usize; 4]),

    #[error("element count {actual} does not match shape {shape:?} ({expected} elements)")]
    ElementCount {
        shape: [usize; 4],
        expected: usize,
        actual: usize,
    },

    #[error("invalid convolution spec: {0}")]
    InvalidSpec(String),

    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("tape: node {id} does not exist (tape holds {len} nodes)")]
    DanglingNode { id: usize, len: usize },

    #[error("tape: {0}")]
    Tape(String),

    #[error("loss node must be scalar, found shape {0:?}")]
    NonScalarLoss([usize; 4]),

    #[error(
        "no architecture with exactly {target} parameters in the search space \
         (nearest below: {below:?}, nearest above: {above:?})"
    )]
    NoSolution {
        target: usize,
        below: Option<usize>,
        above: Option<usize>,
    },

    #[error("non-finite gradient in layer {layer} ({tensor})")]
    NonFiniteGradient { layer: usize, tensor: &'static str },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: truncated payload, expected {expected} bytes but found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("checkpoint architecture does not match the expected architecture")]
    ArchMismatch,

    #[error("{0} is empty")]
    Empty(String),

    #[error("budget of {budget} bytes is below the smallest trainable input ({minimum} bytes)")]
    BudgetTooSmall { budget: u64, minimum: u64 },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
