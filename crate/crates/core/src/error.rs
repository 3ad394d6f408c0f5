use thiserror::Error;

/// Errors raised by the dense kernel and everything built on it.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("dimension mismatch in {op}: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    Dimension {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("buffer of length {len} cannot hold a {rows}x{cols} tensor")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("parameter `{0}` is frozen and cannot be updated")]
    Frozen(String),
    #[error("non-finite value in `{name}` at index {index}")]
    NonFinite { name: String, index: usize },
}

impl KernelError {
    pub(crate) fn dims(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        KernelError::Dimension {
            op,
            left_rows: left.0,
            left_cols: left.1,
            right_rows: right.0,
            right_cols: right.1,
        }
    }
}
