//! Tape-based reverse-mode differentiation over f64 matrices, with the
//! recurrent cells needed by the path models.

pub mod cells;
pub mod error;
pub mod gradcheck;
pub mod params;
pub mod real;
pub mod tape;
pub mod tensor;

pub use cells::{gru_cell, lstm_cell, lstm_stack_step, GruLayer, Linear, Lstm, LstmLayer};
pub use error::{Error, Result};
pub use params::{Grads, Group, LearningRates, ParamId, ParamStore};
pub use real::Real;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
