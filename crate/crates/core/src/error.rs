use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("{op}: row {row} has no entries")]
    EmptyRow { op: &'static str, row: usize },

    #[error("{op}: row {row} sums to {sum}, expected a positive sum")]
    NonPositiveRowSum {
        op: &'static str,
        row: usize,
        sum: f64,
    },

    #[error("{op}: row {row} column {col} is outside the permitted support")]
    SupportViolation {
        op: &'static str,
        row: usize,
        col: usize,
    },

    #[error("{op}: row {row} support differs from its mask")]
    SupportMismatch { op: &'static str, row: usize },

    #[error("invalid row structure: {0}")]
    InvalidStructure(String),

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid preset: {0}")]
    InvalidPreset(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
