//! Visual-perception-guided training for visual imagery EEG decoding.

pub mod dsp;
pub mod eeg;
pub mod experiment;
pub mod models;
pub mod nn;
mod scalar;
pub mod seed;
pub mod synth;
pub mod transform;

pub use scalar::Scalar;

/// Single-precision tensor used for training.
pub type Tensor = nn::Tensor4<f32>;
pub type Tensor64 = nn::Tensor4<f64>;
pub type Network = nn::Model<f32>;
pub type Network64 = nn::Model<f64>;
pub type EegDataset = eeg::Dataset<f32>;
pub type EegEpoch = eeg::Epoch<f32>;
