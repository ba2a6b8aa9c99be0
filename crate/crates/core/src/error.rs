use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("ctc infeasible for sample {sample}: label needs {needed} timesteps, only {available} available")]
    CtcInfeasible {
        sample: usize,
        needed: usize,
        available: usize,
    },

    #[error("instance too large for exhaustive enumeration: {0} paths")]
    TooLarge(f64),

    #[error("distribution does not sum to 1 (row {row} sums to {sum})")]
    NotNormalized { row: usize, sum: f64 },

    #[error("training diverged at epoch {epoch}, step {step}: loss is not a number")]
    Diverged { epoch: usize, step: usize },

    #[error("checkpoint has bad magic")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),

    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),

    #[error("checkpoint parameter `{name}` has shape {found:?}, network expects {expected:?}")]
    CheckpointShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint is missing parameter `{0}`")]
    MissingParam(String),

    #[error("checkpoint has unexpected parameter `{0}`")]
    UnexpectedParam(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("{path}:{line}: {msg}")]
    Annotation {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unknown symbol {0:?} for charset")]
    UnknownSymbol(char),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
