//! Recurrent Buffering Unit path model, window-level LSTM baselines,
//! training and closed-loop simulation.

pub mod baselines;
pub mod checkpoint;
pub mod discriminative;
pub mod error;
pub mod rbu;
pub mod simulate;
pub mod training;

pub use baselines::{train_baseline, BaselineConfig, BaselineKind, BaselineTrainConfig};
pub use checkpoint::{Checkpoint, ModelSpec};
pub use discriminative::{discriminative_score, DiscConfig, DiscReport};
pub use error::{Error, Result};
pub use rbu::{DropMode, QHead, RbuConfig, RbuModel, TrainSelect};
pub use simulate::{simulate, simulate_batch, SimRun};
pub use training::{train, TrainConfig, TrainOutput};
