use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no delivered packets")]
    NoDeliveredPackets,

    #[error("empty trace")]
    EmptyTrace,

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid scenario id {0} (expected 1, 2 or 3)")]
    InvalidScenario(u8),

    #[error("sender emitted non-monotone send time {next} after {prev}")]
    NonMonotoneSend { prev: f64, next: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },

    #[error("unsupported trace format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
