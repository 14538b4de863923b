use alloc::string::String;
use core::fmt;

use crate::fxp::Precision;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Contract violations raised by the arithmetic core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Calibration input contained NaN or an infinity.
    NonFiniteInput,
    /// Calibration was asked for an empty tensor.
    EmptyInput,
    /// A scale was zero, negative or not finite.
    InvalidScale(f64),
    /// A bit width other than 8, 16 or 32.
    UnsupportedBits(u32),
    /// A code does not fit the declared precision.
    CodeOutOfRange { code: i64, precision: Precision },
    /// Two operands were supplied at different precision modes.
    ModeMismatch { expected: Precision, found: Precision },
    /// Operand lengths disagree.
    LengthMismatch { expected: usize, found: usize },
    /// A lane vector of the wrong size was packed.
    LaneCount { expected: usize, found: usize },
    /// Tensor or layer shapes are inconsistent.
    Shape(String),
    /// An argument lies outside the domain of the function.
    Domain(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFiniteInput => f.write_str("calibration input contains a non-finite value"),
            Error::EmptyInput => f.write_str("calibration input is empty"),
            Error::InvalidScale(s) => write!(f, "invalid quantization scale {s}"),
            Error::UnsupportedBits(b) => write!(f, "unsupported bit width {b} (expected 8, 16 or 32)"),
            Error::CodeOutOfRange { code, precision } => {
                write!(f, "code {code} is not representable at {precision}")
            }
            Error::ModeMismatch { expected, found } => {
                write!(f, "precision mode mismatch: expected {expected}, found {found}")
            }
            Error::LengthMismatch { expected, found } => {
                write!(f, "length mismatch: expected {expected}, found {found}")
            }
            Error::LaneCount { expected, found } => {
                write!(f, "wrong lane count: expected {expected}, found {found}")
            }
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Domain(msg) => write!(f, "argument out of domain: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
