//! Crate-wide error type.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Incompatible tensor shapes, names both sides.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A scalar argument outside its legal range.
    Param { what: &'static str, detail: String },
    /// A value outside its legal numeric range.
    Range { what: &'static str, value: f64 },
    /// A token id outside its vocabulary range.
    Vocab { id: u32, context: &'static str },
    /// A structurally malformed token sequence.
    Parse { index: usize, detail: String },
    /// A layout exceeding a size cap.
    Size { what: &'static str, got: usize, max: usize },
    /// An index out of bounds.
    Index { what: &'static str, got: usize, len: usize },
    /// Empty input where at least one element is required.
    Empty(&'static str),
    /// A grammar rule that cannot be satisfied.
    Generation { rule: String, detail: String },
    /// Non-finite loss or other numeric failure, with context.
    Numeric { detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch {lhs:?} vs {rhs:?}")
            }
            Error::Param { what, detail } => write!(f, "invalid parameter {what}: {detail}"),
            Error::Range { what, value } => write!(f, "{what} out of range: {value}"),
            Error::Vocab { id, context } => write!(f, "token id {id} invalid for {context}"),
            Error::Parse { index, detail } => {
                write!(f, "malformed sequence at index {index}: {detail}")
            }
            Error::Size { what, got, max } => write!(f, "{what}: {got} exceeds maximum {max}"),
            Error::Index { what, got, len } => {
                write!(f, "{what} index {got} out of bounds (len {len})")
            }
            Error::Empty(what) => write!(f, "{what} must be non-empty"),
            Error::Generation { rule, detail } => {
                write!(f, "grammar rule '{rule}' cannot be satisfied: {detail}")
            }
            Error::Numeric { detail } => write!(f, "numeric failure: {detail}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
