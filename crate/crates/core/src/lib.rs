//! Weakly supervised segmentation and recognition of human activity streams.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`], [`tape`], [`params`], [`optim`], [`checkpoint`]: dense
//!   arrays, reverse-mode differentiation, parameter storage, Adam and the
//!   weight file format.
//! * [`layers`]: dilated temporal convolution, batch normalization, max-pool,
//!   LSTM / residual LSTM / BLSTM and fully connected layers.
//! * [`branch`]: the shared siamese encoder.
//! * [`segmentation`]: history/future boundary scoring and soft segmentation.
//! * [`recognition`]: pair-trained similarity metric and embeddings.
//! * [`clustering`], [`evaluation`]: single-linkage clustering and metrics.
//! * [`data`]: streams, dataset loaders, normalization and the synthetic
//!   generator.
//! * [`config`], [`run`]: run configuration and the file-based steps behind
//!   the command line tool.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod branch;
pub mod checkpoint;
pub mod clustering;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod recognition;
pub mod run;
pub mod scalar;
pub mod segmentation;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{MetricScalar, Scalar};
pub use tensor::Tensor;

/// Exact rational used for metric checks.
pub type Exact = num_rational::Ratio<i64>;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = tape::Tape<f64>;
pub type ParamStore64 = params::ParamStore<f64>;
pub type Branch64 = branch::Branch;
pub type SegmentationNet64 = segmentation::SegmentationNet<f64>;
pub type SegmentationNet32 = segmentation::SegmentationNet<f32>;
pub type RecognitionNet64 = recognition::RecognitionNet<f64>;
pub type RecognitionNet32 = recognition::RecognitionNet<f32>;
pub type SensorStream64 = data::SensorStream<f64>;
pub type Embedding64 = branch::Embedding<f64>;
