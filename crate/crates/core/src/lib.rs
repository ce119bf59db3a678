//! Packet-trace domain types, a discrete-event bottleneck simulator used as
//! ground truth, closed-loop congestion-control senders and distributional
//! trace metrics.

pub mod error;
pub mod groundtruth;
pub mod io;
pub mod metrics;
pub mod protocols;
pub mod rng;
pub mod trace;
pub mod window;

pub use error::{Error, Result};
pub use io::{Dataset, Discretizer, GlobalRanges, Range, SplitTag};
pub use trace::{Delay, PacketRecord, StaticFeatures, Trace};
