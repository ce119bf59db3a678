use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("{rows}x{cols} tensor needs {} values, got {len}", rows * cols)]
    Data { rows: usize, cols: usize, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("index ({0}, {1}) out of range for shape {2:?}")]
    Index(usize, usize, (usize, usize)),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("variables from different tapes")]
    ForeignTape,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
