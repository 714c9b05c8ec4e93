use std::fmt;

use thiserror::Error;

pub type Result<T, E = MegtError> = std::result::Result<T, E>;

/// Rows × cols, printed as `RxC`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape(pub usize, pub usize);

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.0, self.1)
    }
}

#[derive(Debug, Error)]
pub enum MegtError {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("bag at {resolution} resolution is empty")]
    EmptyBag { resolution: &'static str },

    #[error("non-finite loss at epoch {epoch}")]
    NonFinite { epoch: usize },

    #[error("finite-difference oracle produced a non-finite value at coordinate {index}")]
    Oracle { index: usize },

    #[error("undefined AUC: labels contain a single class")]
    UndefinedAuc,

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Binary file parse failures (bag files and checkpoints).
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("truncated file: needed {needed} more bytes while reading {what}")]
    Truncated { what: &'static str, needed: usize },

    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("malformed field {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
}

impl MegtError {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        MegtError::Shape {
            op,
            left: Shape(left.0, left.1),
            right: Shape(right.0, right.1),
        }
    }
}
