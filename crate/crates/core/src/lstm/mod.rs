//! Stacked LSTM forecaster with variational dropout.
//!
//! All gates of a layer read the same masked vector `[x_t, h_{t-1}] ⊙ m`, and
//! `m` is fixed for the whole sequence. The final hidden state of the top
//! layer feeds a small dense head whose inputs are dropped unit-wise.

mod checkpoint;
mod masks;
mod network;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use masks::DropoutMasks;
pub use network::{
    backward, backward_into, dense_forward, forward, lstm_step, predict, Activation, CellState, ForwardCache,
};
pub use params::{Architecture, DenseLayerParams, LstmLayerParams, Matrix, ModelParams, TensorMut, TensorRef};
