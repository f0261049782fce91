//! Tape-based reverse-mode differentiation and the layers the enhancement
//! network is assembled from.

mod layers;
mod tape;
mod tensor;

pub use layers::{
    bilinear_score, dense, dropout, lstm_step, run_lstm, softmax, Activation, Dense, Direction, LstmCellParams,
};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
