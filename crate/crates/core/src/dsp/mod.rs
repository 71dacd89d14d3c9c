//! Filtering, decimation, band power and alpha-tendency analysis.

mod filter;
mod pipeline;
mod spectral;
pub mod topomap;

pub use filter::{design_bandpass, filter_epoch, resample, FilterCoefficients, FilterSpec, Section};
pub use pipeline::{preprocess_dataset, preprocess_epoch, PreprocessConfig};
pub use spectral::{alpha_tendency, ols_slope, welch_band_power, BandPower, TendencyResult};
pub use topomap::{export_topomap, read_values_csv, render_topomap_svg, write_values_csv};

use thiserror::Error;

use crate::eeg::EegError;

/// Alpha band edges in Hz.
pub const ALPHA_BAND: (f64, f64) = (8.0, 13.0);

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("invalid band: low {low} Hz must be positive and below high {high} Hz")]
    InvalidBand { low: f64, high: f64 },
    #[error("high edge {high} Hz is not below Nyquist {nyquist} Hz")]
    NyquistViolation { high: f64, nyquist: f64 },
    #[error("filter order must be at least 1")]
    InvalidOrder,
    #[error("invalid sampling rate {0}")]
    InvalidSampleRate(f64),
    #[error("unstable filter: pole magnitude {max_pole}")]
    UnstableFilter { max_pole: f64 },
    #[error("{fs} Hz is not an integer multiple of {target} Hz")]
    NonIntegerRatio { fs: f64, target: f64 },
    #[error("band ({low}, {high}) Hz outside (0, {nyquist}) Hz")]
    BandOutOfRange { low: f64, high: f64, nyquist: f64 },
    #[error("window of {window} samples exceeds signal length {len}")]
    WindowTooLong { window: usize, len: usize },
    #[error("window length {0} too small")]
    InvalidWindow(usize),
    #[error("overlap {0} outside [0, 1)")]
    InvalidOverlap(f64),
    #[error("epoch of {samples} samples holds fewer than two windows of {window} (step {step})")]
    EpochTooShort { samples: usize, window: usize, step: usize },
    #[error("cannot crop {have} samples to {want}")]
    CropTooLong { have: usize, want: usize },
    #[error("value count mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("no scalp position for electrode {0:?}")]
    UnknownElectrode(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Eeg(#[from] EegError),
}

impl From<std::io::Error> for DspError {
    fn from(e: std::io::Error) -> Self {
        DspError::Io(e.to_string())
    }
}
