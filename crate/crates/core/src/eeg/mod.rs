//! Trial, montage and dataset types plus the on-disk dataset directory format.

mod io;

pub use io::{load_dataset, save_dataset, Manifest, TrialEntry, MANIFEST_FILE};

use std::collections::HashSet;
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

/// Channels treated as occipital when a manifest does not say otherwise.
pub const DEFAULT_OCCIPITAL: [&str; 9] = ["O1", "O2", "Oz", "Iz", "POz", "PO3", "PO4", "PO7", "PO8"];

/// The 64-electrode 10/20 layout used for acquisition.
pub const STANDARD_64: [&str; 64] = [
    "Fp1", "Fp2", "AF3", "AF4", "AF7", "AF8", "AFz", "F1", "F2", "F3", "F4", "F5", "F6", "F7", "F8",
    "Fz", "FC1", "FC2", "FC3", "FC4", "FC5", "FC6", "FT7", "FT8", "FT9", "FT10", "C1", "C2", "C3",
    "C4", "C5", "C6", "Cz", "T7", "T8", "CP1", "CP2", "CP3", "CP4", "CP5", "CP6", "CPz", "TP7",
    "TP8", "TP9", "TP10", "P1", "P2", "P3", "P4", "P5", "P6", "P7", "P8", "Pz", "PO3", "PO4", "PO7",
    "PO8", "POz", "O1", "O2", "Oz", "Iz",
];

/// Class names of the four imagined actions, in label order.
pub const DEFAULT_CLASSES: [&str; 4] = ["picking_up_phone", "pouring_water", "opening_door", "eating_food"];

#[derive(Debug, Error, PartialEq)]
pub enum EegError {
    #[error("montage has no channels")]
    EmptyMontage,
    #[error("duplicate channel name {0:?}")]
    DuplicateChannel(String),
    #[error("unknown channel name {0:?}")]
    UnknownChannel(String),
    #[error("occipital index {index} outside montage of {len} channels")]
    OccipitalOutOfRange { index: usize, len: usize },
    #[error("epoch has no channels")]
    EmptyChannels,
    #[error("epoch has no samples")]
    EmptySamples,
    #[error("non-finite sample at channel {channel}, index {sample}")]
    NonFiniteSample { channel: usize, sample: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("channel count mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("sampling rate mismatch: expected {expected} Hz, found {found} Hz")]
    SampleRateMismatch { expected: f64, found: f64 },
    #[error("sample count mismatch: expected {expected}, found {found}")]
    SampleCountMismatch { expected: usize, found: usize },
    #[error("invalid sampling rate {0}")]
    InvalidSampleRate(f64),
    #[error("no class names")]
    NoClasses,
    #[error("manifest not found at {0}")]
    MissingManifest(String),
    #[error("malformed manifest: {0}")]
    BadManifest(String),
    #[error("payload {file} has {found} bytes, expected {expected}")]
    TruncatedPayload { file: String, expected: usize, found: usize },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for EegError {
    fn from(e: std::io::Error) -> Self {
        EegError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialKind {
    Imagery,
    Perception,
}

impl fmt::Display for TrialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrialKind::Imagery => f.write_str("imagery"),
            TrialKind::Perception => f.write_str("perception"),
        }
    }
}

/// Ordered electrode names and the subset treated as occipital.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Montage {
    channel_names: Vec<String>,
    occipital_indices: Vec<usize>,
}

impl Montage {
    pub fn new(channel_names: Vec<String>, occipital_indices: Vec<usize>) -> Result<Self, EegError> {
        if channel_names.is_empty() {
            return Err(EegError::EmptyMontage);
        }
        let mut seen = HashSet::new();
        for name in &channel_names {
            if !seen.insert(name.as_str()) {
                return Err(EegError::DuplicateChannel(name.clone()));
            }
        }
        let len = channel_names.len();
        let mut occipital_indices = occipital_indices;
        occipital_indices.sort_unstable();
        occipital_indices.dedup();
        if let Some(&index) = occipital_indices.iter().find(|&&i| i >= len) {
            return Err(EegError::OccipitalOutOfRange { index, len });
        }
        Ok(Montage { channel_names, occipital_indices })
    }

    /// Builds a montage whose occipital set is given by name.
    pub fn with_occipital_names<S: AsRef<str>>(channel_names: Vec<String>, occipital: &[S]) -> Result<Self, EegError> {
        let mut indices = Vec::with_capacity(occipital.len());
        for name in occipital {
            let name = name.as_ref();
            let i = channel_names
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| EegError::UnknownChannel(name.to_string()))?;
            indices.push(i);
        }
        Montage::new(channel_names, indices)
    }

    /// Occipital set is whichever of [`DEFAULT_OCCIPITAL`] the montage contains.
    pub fn with_default_occipital(channel_names: Vec<String>) -> Result<Self, EegError> {
        let indices = channel_names
            .iter()
            .enumerate()
            .filter(|(_, n)| DEFAULT_OCCIPITAL.contains(&n.as_str()))
            .map(|(i, _)| i)
            .collect();
        Montage::new(channel_names, indices)
    }

    pub fn standard_64() -> Self {
        Montage::with_default_occipital(STANDARD_64.iter().map(|s| s.to_string()).collect())
            .expect("static montage is valid")
    }

    pub fn len(&self) -> usize {
        self.channel_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channel_names.is_empty()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn occipital_indices(&self) -> &[usize] {
        &self.occipital_indices
    }

    pub fn occipital_names(&self) -> Vec<String> {
        self.occipital_indices.iter().map(|&i| self.channel_names[i].clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|c| c == name)
    }

    /// Restricts the montage to `indices` (in the given order).
    pub fn select(&self, indices: &[usize]) -> Result<Montage, EegError> {
        let len = self.len();
        let mut names = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= len {
                return Err(EegError::ChannelMismatch { expected: len, found: i + 1 });
            }
            names.push(self.channel_names[i].clone());
        }
        let occipital: Vec<usize> = indices
            .iter()
            .enumerate()
            .filter(|(_, i)| self.occipital_indices.contains(i))
            .map(|(new, _)| new)
            .collect();
        Montage::new(names, occipital)
    }
}

/// One trial: `channels x time` samples with its label and trial kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch<T> {
    pub samples: Array2<T>,
    pub fs_hz: f64,
    pub label: usize,
    pub kind: TrialKind,
}

impl<T: Scalar> Epoch<T> {
    pub fn new(samples: Array2<T>, fs_hz: f64, label: usize, kind: TrialKind) -> Self {
        Epoch { samples, fs_hz, label, kind }
    }

    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.fs_hz
    }

    /// Same trial with samples replaced.
    pub fn with_samples(&self, samples: Array2<T>) -> Self {
        Epoch { samples, fs_hz: self.fs_hz, label: self.label, kind: self.kind }
    }

    pub fn map_samples<U: Scalar>(&self, f: impl Fn(T) -> U) -> Epoch<U> {
        Epoch { samples: self.samples.mapv(f), fs_hz: self.fs_hz, label: self.label, kind: self.kind }
    }

    /// Keeps only the listed channels, in order.
    pub fn select_channels(&self, indices: &[usize]) -> Self {
        self.with_samples(self.samples.select(ndarray::Axis(0), indices))
    }
}

/// Checks the structural invariants of a trial against a montage.
pub fn validate_epoch<T: Scalar>(epoch: &Epoch<T>, montage: &Montage, n_classes: usize) -> Result<(), EegError> {
    if epoch.n_channels() == 0 {
        return Err(EegError::EmptyChannels);
    }
    if epoch.n_samples() == 0 {
        return Err(EegError::EmptySamples);
    }
    if !(epoch.fs_hz.is_finite() && epoch.fs_hz > 0.0) {
        return Err(EegError::InvalidSampleRate(epoch.fs_hz));
    }
    if epoch.label >= n_classes {
        return Err(EegError::LabelOutOfRange { label: epoch.label, n_classes });
    }
    if epoch.n_channels() != montage.len() {
        return Err(EegError::ChannelMismatch { expected: montage.len(), found: epoch.n_channels() });
    }
    for ((channel, sample), v) in epoch.samples.indexed_iter() {
        if !v.is_finite() {
            return Err(EegError::NonFiniteSample { channel, sample });
        }
    }
    Ok(())
}

/// A labelled collection of equally shaped trials sharing one montage.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub name: String,
    pub montage: Montage,
    pub fs_hz: f64,
    pub classes: Vec<String>,
    pub epochs: Vec<Epoch<T>>,
}

impl<T: Scalar> Dataset<T> {
    /// Validates every trial and the shared shape before constructing.
    pub fn new(
        name: impl Into<String>,
        montage: Montage,
        fs_hz: f64,
        classes: Vec<String>,
        epochs: Vec<Epoch<T>>,
    ) -> Result<Self, EegError> {
        let ds = Dataset { name: name.into(), montage, fs_hz, classes, epochs };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), EegError> {
        if !(self.fs_hz.is_finite() && self.fs_hz > 0.0) {
            return Err(EegError::InvalidSampleRate(self.fs_hz));
        }
        if self.classes.is_empty() {
            return Err(EegError::NoClasses);
        }
        let n_samples = self.n_samples();
        for epoch in &self.epochs {
            validate_epoch(epoch, &self.montage, self.classes.len())?;
            if epoch.fs_hz != self.fs_hz {
                return Err(EegError::SampleRateMismatch { expected: self.fs_hz, found: epoch.fs_hz });
            }
            if epoch.n_samples() != n_samples {
                return Err(EegError::SampleCountMismatch { expected: n_samples, found: epoch.n_samples() });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Samples per trial; zero for an empty dataset.
    pub fn n_samples(&self) -> usize {
        self.epochs.first().map_or(0, |e| e.n_samples())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.epochs.iter().map(|e| e.label).collect()
    }

    /// Same metadata with different trials.
    pub fn with_epochs(&self, epochs: Vec<Epoch<T>>) -> Self {
        Dataset {
            name: self.name.clone(),
            montage: self.montage.clone(),
            fs_hz: epochs.first().map_or(self.fs_hz, |e| e.fs_hz),
            classes: self.classes.clone(),
            epochs,
        }
    }

    pub fn select_channels(&self, indices: &[usize]) -> Result<Self, EegError> {
        let montage = self.montage.select(indices)?;
        let epochs = self.epochs.iter().map(|e| e.select_channels(indices)).collect();
        Ok(Dataset { name: self.name.clone(), montage, fs_hz: self.fs_hz, classes: self.classes.clone(), epochs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn montage(n: usize) -> Montage {
        Montage::with_default_occipital((0..n).map(|i| format!("ch{i}")).collect()).unwrap()
    }

    #[test]
    fn standard_montage_has_64_unique_channels() {
        let m = Montage::standard_64();
        assert_eq!(m.len(), 64);
        assert_eq!(m.occipital_indices().len(), DEFAULT_OCCIPITAL.len());
        assert_eq!(m.channel_names()[m.occipital_indices()[0]], "PO3");
    }

    #[test]
    fn montage_rejects_duplicates_and_bad_occipital() {
        let names = vec!["A".to_string(), "A".to_string()];
        assert_eq!(Montage::new(names, vec![]), Err(EegError::DuplicateChannel("A".into())));
        let names = vec!["A".to_string()];
        assert_eq!(Montage::new(names, vec![3]), Err(EegError::OccipitalOutOfRange { index: 3, len: 1 }));
        assert_eq!(Montage::new(vec![], vec![]), Err(EegError::EmptyMontage));
    }

    #[test]
    fn nan_sample_is_rejected() {
        let mut s = Array2::<f32>::zeros((4, 10));
        s[[2, 7]] = f32::NAN;
        let e = Epoch::new(s, 250.0, 0, TrialKind::Imagery);
        assert_eq!(validate_epoch(&e, &montage(4), 4), Err(EegError::NonFiniteSample { channel: 2, sample: 7 }));
    }

    #[test]
    fn empty_channels_rejected() {
        let e = Epoch::new(Array2::<f32>::zeros((0, 10)), 250.0, 0, TrialKind::Imagery);
        assert_eq!(validate_epoch(&e, &montage(4), 4), Err(EegError::EmptyChannels));
    }

    #[test]
    fn label_and_channel_checks() {
        let e = Epoch::new(Array2::<f64>::zeros((4, 10)), 250.0, 4, TrialKind::Perception);
        assert_eq!(validate_epoch(&e, &montage(4), 4), Err(EegError::LabelOutOfRange { label: 4, n_classes: 4 }));
        let e = Epoch::new(Array2::<f64>::zeros((3, 10)), 250.0, 1, TrialKind::Perception);
        assert_eq!(validate_epoch(&e, &montage(4), 4), Err(EegError::ChannelMismatch { expected: 4, found: 3 }));
    }

    #[test]
    fn well_formed_64_channel_epoch_passes() {
        let e = Epoch::new(Array2::<f32>::ones((64, 1251)), 250.0, 2, TrialKind::Imagery);
        assert!(validate_epoch(&e, &Montage::standard_64(), 4).is_ok());
    }

    #[test]
    fn montage_select_remaps_occipital() {
        let m = Montage::standard_64();
        let o1 = m.index_of("O1").unwrap();
        let fz = m.index_of("Fz").unwrap();
        let sub = m.select(&[fz, o1]).unwrap();
        assert_eq!(sub.channel_names(), &["Fz".to_string(), "O1".to_string()]);
        assert_eq!(sub.occipital_indices(), &[1]);
    }
}
