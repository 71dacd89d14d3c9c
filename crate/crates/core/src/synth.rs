//! Synthetic imagery/perception trials with opposite alpha-power trends.
//!
//! Each trial is a class-specific spatial pattern over the occipital
//! channels times an alpha oscillation whose amplitude ramps linearly
//! (upward for imagery, downward for perception), plus white noise on
//! every channel.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{alpha_tendency, DspError, ALPHA_BAND};
use crate::eeg::{Dataset, EegError, Epoch, Montage, TrialKind, DEFAULT_CLASSES, DEFAULT_OCCIPITAL, STANDARD_64};
use crate::seed::{stream_id, stream_rng};
use crate::Scalar;

/// Occipital electrodes used by the generator, in pattern order.
pub const SYNTH_OCCIPITAL: [&str; 4] = ["O1", "O2", "Oz", "POz"];

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("dataset has no trials")]
    EmptyDataset,
    #[error(transparent)]
    Eeg(#[from] EegError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_channels: usize,
    pub fs_hz: f64,
    pub n_samples: usize,
    pub imagery_per_class: usize,
    pub perception_per_class: usize,
    pub alpha_center_hz: f64,
    /// Per-trial uniform jitter of the oscillation frequency, in Hz.
    pub alpha_jitter_hz: f64,
    /// Relative amplitude change across an imagery trial; envelope runs
    /// from `1 - ramp/2` to `1 + ramp/2`.
    pub imagery_ramp: f64,
    pub perception_ramp: f64,
    /// One row per class, one weight per occipital channel.
    pub patterns: Vec<Vec<f64>>,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Sign rows of a 4x4 Hadamard matrix, with the class's own channel
/// emphasised so that band power also separates the classes.
pub fn default_patterns(n_occipital: usize) -> Vec<Vec<f64>> {
    const SIGNS: [[f64; 4]; 4] = [[1.0, 1.0, 1.0, 1.0], [1.0, -1.0, 1.0, -1.0], [1.0, 1.0, -1.0, -1.0], [1.0, -1.0, -1.0, 1.0]];
    (0..DEFAULT_CLASSES.len())
        .map(|k| (0..n_occipital).map(|j| SIGNS[k][j % 4] * if j % 4 == k { 1.0 } else { 0.5 }).collect())
        .collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_channels: 16,
            fs_hz: 250.0,
            n_samples: 1251,
            imagery_per_class: 50,
            perception_per_class: 100,
            alpha_center_hz: 10.0,
            alpha_jitter_hz: 0.5,
            imagery_ramp: 1.0,
            perception_ramp: -1.0,
            patterns: default_patterns(SYNTH_OCCIPITAL.len()),
            noise_sigma: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_occipital(&self) -> usize {
        self.n_channels.min(SYNTH_OCCIPITAL.len())
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_channels == 0 || self.n_channels > STANDARD_64.len() {
            return bad(format!("channel count {} outside 1..=64", self.n_channels));
        }
        if !(self.fs_hz > 0.0) || self.n_samples < 2 {
            return bad("sampling rate and length must be positive".into());
        }
        if !(self.alpha_center_hz > 0.0 && self.alpha_center_hz + self.alpha_jitter_hz < self.fs_hz / 2.0)
            || self.alpha_jitter_hz < 0.0
        {
            return bad("alpha frequency must lie below Nyquist".into());
        }
        if !(self.imagery_ramp > 0.0 && self.perception_ramp < 0.0) {
            return bad("imagery ramp must be positive and perception ramp negative".into());
        }
        if self.imagery_ramp >= 2.0 || self.perception_ramp <= -2.0 {
            return bad("ramp magnitude must stay below 2 so the envelope stays positive".into());
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be finite and non-negative".into());
        }
        if self.patterns.len() != DEFAULT_CLASSES.len() || self.patterns.iter().any(|p| p.len() != self.n_occipital()) {
            return bad(format!("need {} patterns of length {}", DEFAULT_CLASSES.len(), self.n_occipital()));
        }
        for i in 0..self.patterns.len() {
            for j in 0..i {
                if self.patterns[i] == self.patterns[j] {
                    return bad(format!("classes {j} and {i} share a pattern"));
                }
            }
        }
        Ok(())
    }

    /// Non-occipital channels first, then the occipital set.
    pub fn montage(&self) -> Result<Montage, SynthError> {
        let n_occ = self.n_occipital();
        let mut names: Vec<String> = STANDARD_64
            .iter()
            .filter(|n| !DEFAULT_OCCIPITAL.contains(n))
            .take(self.n_channels - n_occ)
            .map(|s| s.to_string())
            .collect();
        names.extend(SYNTH_OCCIPITAL[..n_occ].iter().map(|s| s.to_string()));
        Ok(Montage::with_occipital_names(names, &SYNTH_OCCIPITAL[..n_occ])?)
    }
}

fn trial<T: Scalar>(cfg: &SynthConfig, occipital: &[usize], kind: TrialKind, index: usize, label: usize) -> Epoch<T> {
    let tag = match kind {
        TrialKind::Imagery => 1,
        TrialKind::Perception => 2,
    };
    let mut rng = stream_rng(cfg.seed, stream_id(tag, index as u32));
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let freq = cfg.alpha_center_hz + if cfg.alpha_jitter_hz > 0.0 { rng.gen_range(-cfg.alpha_jitter_hz..cfg.alpha_jitter_hz) } else { 0.0 };
    let ramp = match kind {
        TrialKind::Imagery => cfg.imagery_ramp,
        TrialKind::Perception => cfg.perception_ramp,
    };
    let n = cfg.n_samples;
    let carrier: Vec<f64> = (0..n)
        .map(|t| {
            let frac = t as f64 / (n - 1) as f64;
            (1.0 + ramp * (frac - 0.5)) * (std::f64::consts::TAU * freq * t as f64 / cfg.fs_hz + phase).sin()
        })
        .collect();
    let mut samples = Array2::<f64>::zeros((cfg.n_channels, n));
    if cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
        samples.iter_mut().for_each(|v| *v = noise.sample(&mut rng));
    }
    for (j, &ch) in occipital.iter().enumerate() {
        let w = cfg.patterns[label][j];
        for (v, c) in samples.row_mut(ch).iter_mut().zip(&carrier) {
            *v += w * c;
        }
    }
    Epoch::new(samples.mapv(T::lit), cfg.fs_hz, label, kind)
}

fn kind_dataset<T: Scalar>(cfg: &SynthConfig, montage: &Montage, kind: TrialKind, per_class: usize) -> Result<Dataset<T>, SynthError> {
    let n_classes = DEFAULT_CLASSES.len();
    let occipital = montage.occipital_indices().to_vec();
    let epochs: Vec<Epoch<T>> = (0..per_class * n_classes)
        .into_par_iter()
        .map(|i| trial(cfg, &occipital, kind, i, i % n_classes))
        .collect();
    let name = match kind {
        TrialKind::Imagery => "synthetic_imagery",
        TrialKind::Perception => "synthetic_perception",
    };
    let classes = DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect();
    Ok(Dataset::new(name, montage.clone(), cfg.fs_hz, classes, epochs)?)
}

/// Imagery and perception datasets; labels cycle through the classes.
pub fn generate_synthetic<T: Scalar>(cfg: &SynthConfig) -> Result<(Dataset<T>, Dataset<T>), SynthError> {
    cfg.validate()?;
    let montage = cfg.montage()?;
    let vi = kind_dataset(cfg, &montage, TrialKind::Imagery, cfg.imagery_per_class)?;
    let vp = kind_dataset(cfg, &montage, TrialKind::Perception, cfg.perception_per_class)?;
    Ok((vi, vp))
}

/// Direction of an expected alpha trend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrendSign {
    Positive,
    Negative,
}

/// Mean occipital alpha slope of each trial (1 s windows, 0.25 s step).
pub fn occipital_slopes<T: Scalar>(dataset: &Dataset<T>) -> Result<Vec<f64>, SynthError> {
    let occ = dataset.montage.occipital_indices();
    dataset
        .epochs
        .par_iter()
        .map(|e| {
            let t = alpha_tendency(e, ALPHA_BAND, 1.0, 0.25)?;
            Ok(t.mean_slope(occ).unwrap_or(0.0))
        })
        .collect()
}

/// Fraction of trials whose mean occipital slope has the expected sign.
pub fn verify_tendency<T: Scalar>(dataset: &Dataset<T>, expected: TrendSign) -> Result<f64, SynthError> {
    if dataset.is_empty() {
        return Err(SynthError::EmptyDataset);
    }
    let slopes = occipital_slopes(dataset)?;
    let hits = slopes
        .iter()
        .filter(|&&s| match expected {
            TrendSign::Positive => s > 0.0,
            TrendSign::Negative => s < 0.0,
        })
        .count();
    Ok(hits as f64 / slopes.len() as f64)
}
