use serde::{Deserialize, Serialize};

use super::{design_bandpass, filter_epoch, resample, DspError, FilterCoefficients, FilterSpec};
use crate::eeg::{Dataset, Epoch};
use crate::Scalar;

/// Band-pass, decimate, then keep the leading `crop` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub band: (f64, f64),
    pub order: usize,
    pub zero_phase: bool,
    pub target_fs: Option<f64>,
    pub crop: Option<usize>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { band: super::ALPHA_BAND, order: 4, zero_phase: true, target_fs: Some(250.0), crop: Some(1251) }
    }
}

pub fn preprocess_epoch<T: Scalar>(epoch: &Epoch<T>, config: &PreprocessConfig) -> Result<Epoch<T>, DspError> {
    let spec = FilterSpec::new(config.band.0, config.band.1, config.order, epoch.fs_hz);
    apply(epoch, &design_bandpass(&spec)?, config)
}

fn apply<T: Scalar>(epoch: &Epoch<T>, coeffs: &FilterCoefficients, config: &PreprocessConfig) -> Result<Epoch<T>, DspError> {
    let mut out = filter_epoch(epoch, coeffs, config.zero_phase)?;
    if let Some(fs) = config.target_fs {
        out = resample(&out, fs)?;
    }
    if let Some(len) = config.crop {
        if out.n_samples() < len {
            return Err(DspError::CropTooLong { have: out.n_samples(), want: len });
        }
        out = out.with_samples(out.samples.slice(ndarray::s![.., ..len]).to_owned());
    }
    Ok(out)
}

/// Applies [`preprocess_epoch`] to every trial; the filter is designed once.
pub fn preprocess_dataset<T: Scalar>(dataset: &Dataset<T>, config: &PreprocessConfig) -> Result<Dataset<T>, DspError> {
    let spec = FilterSpec::new(config.band.0, config.band.1, config.order, dataset.fs_hz);
    let coeffs = design_bandpass(&spec)?;
    let epochs = dataset.epochs.iter().map(|e| apply(e, &coeffs, config)).collect::<Result<Vec<_>, _>>()?;
    let mut ds = dataset.with_epochs(epochs);
    ds.fs_hz = config.target_fs.unwrap_or(dataset.fs_hz);
    ds.validate()?;
    Ok(ds)
}
