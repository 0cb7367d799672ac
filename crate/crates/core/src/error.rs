use alloc::string::String;

/// Errors raised by the ladder engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    Shape {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("length mismatch in {op}: expected {expected}, got {actual}")]
    Length {
        op: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("non-finite cost at epoch {epoch}, step {step}")]
    NonFiniteCost { epoch: usize, step: usize },
    #[error("non-finite function value at coordinate {0}")]
    NonFiniteAt(usize),
    #[error("batch of {0} rows is too small, batch normalization needs at least 2")]
    BatchTooSmall(usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("idx: bad magic, leading bytes must be zero, got {0:#06x}")]
    IdxMagic(u16),
    #[error("idx: unsupported element type {0:#04x}, only unsigned bytes (0x08) are supported")]
    IdxType(u8),
    #[error("idx: truncated input, need {needed} bytes, have {available}")]
    IdxTruncated { needed: usize, available: usize },
}

/// Matrix dimensions, used in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape(pub usize, pub usize);

impl core::fmt::Display for Shape {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}x{}", self.0, self.1)
    }
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
