//! Network building blocks: dilated temporal convolution, batch
//! normalization, temporal max-pooling, LSTM cells (plain, residual-stacked
//! and bidirectional) and fully connected layers.
//!
//! Layers own [`ParamId`](crate::params::ParamId) handles into a
//! [`ParamStore`](crate::params::ParamStore) and record their computation on
//! the tape of a [`Session`](crate::params::Session).

mod conv;
mod fc;
mod lstm;
mod norm;

pub use conv::{conv1d_dilated, max_pool1d, DilatedConv};
pub use fc::{Activation, Fc};
pub use lstm::{lstm_sequence, lstm_step, LstmCell, LstmKind, LstmLayer, ResidualLstmStack};
pub use norm::BatchNorm;

/// Glorot-style bound `sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
