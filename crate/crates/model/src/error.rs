use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] pathsim_core::Error),

    #[error(transparent)]
    Autodiff(#[from] pathsim_autodiff::Error),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid bounds: lower {lo} must be below upper {hi}")]
    Bounds { lo: f64, hi: f64 },

    #[error("heuristic buffer size is not positive (y_max {y_max}, d_prop {d_prop})")]
    NonPositiveBuffer { y_max: f64, d_prop: f64 },

    #[error("invalid queue index {0}")]
    QueueIndex(usize),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("trace {0} is shorter than one window")]
    ShortTrace(usize),

    #[error("need at least {need} traces per side, got {got}")]
    TooFewTraces { need: usize, got: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
