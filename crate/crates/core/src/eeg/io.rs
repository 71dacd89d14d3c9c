//! Dataset directory layout.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/trial_00000.f32    n_channels * n_samples little-endian f32, channel-major
//! <dir>/trial_00001.f32
//! ...
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, EegError, Epoch, Montage, TrialKind};
use crate::Scalar;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub file: String,
    pub label: usize,
    pub kind: TrialKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub fs_hz: f64,
    pub n_channels: usize,
    pub channel_names: Vec<String>,
    /// Absent means the default occipital set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occipital_channels: Option<Vec<String>>,
    pub n_samples: usize,
    pub classes: Vec<String>,
    pub trials: Vec<TrialEntry>,
}

fn trial_file_name(i: usize) -> String {
    format!("trial_{i:05}.f32")
}

/// Reads a dataset directory, validating every trial.
pub fn load_dataset<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>, EegError> {
    let dir = path.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(EegError::MissingManifest(manifest_path.display().to_string()));
    }
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| EegError::BadManifest(e.to_string()))?;

    if manifest.n_channels != manifest.channel_names.len() {
        return Err(EegError::ChannelMismatch { expected: manifest.n_channels, found: manifest.channel_names.len() });
    }
    let montage = match &manifest.occipital_channels {
        Some(names) => Montage::with_occipital_names(manifest.channel_names.clone(), names)?,
        None => Montage::with_default_occipital(manifest.channel_names.clone())?,
    };

    let (n_ch, n_t) = (manifest.n_channels, manifest.n_samples);
    let expected = n_ch * n_t * 4;
    let mut epochs = Vec::with_capacity(manifest.trials.len());
    for trial in &manifest.trials {
        let bytes = fs::read(dir.join(&trial.file))?;
        if bytes.len() != expected {
            return Err(EegError::TruncatedPayload { file: trial.file.clone(), expected, found: bytes.len() });
        }
        let values: Vec<T> = bytes
            .chunks_exact(4)
            .map(|b| T::from_sample(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        let samples = Array2::from_shape_vec((n_ch, n_t), values).expect("length checked above");
        epochs.push(Epoch::new(samples, manifest.fs_hz, trial.label, trial.kind));
    }
    Dataset::new(manifest.name, montage, manifest.fs_hz, manifest.classes, epochs)
}

/// Writes `dataset` as a directory, creating it if needed.
pub fn save_dataset<T: Scalar>(dataset: &Dataset<T>, path: impl AsRef<Path>) -> Result<(), EegError> {
    dataset.validate()?;
    let dir = path.as_ref();
    fs::create_dir_all(dir)?;

    let mut trials = Vec::with_capacity(dataset.len());
    for (i, epoch) in dataset.epochs.iter().enumerate() {
        let file = trial_file_name(i);
        let mut bytes = Vec::with_capacity(epoch.samples.len() * 4);
        // Row-major iteration is channel-major for a (channels, time) array.
        for v in epoch.samples.iter() {
            bytes.extend_from_slice(&v.as_f32().to_le_bytes());
        }
        fs::write(dir.join(&file), bytes)?;
        trials.push(TrialEntry { file, label: epoch.label, kind: epoch.kind });
    }

    let manifest = Manifest {
        name: dataset.name.clone(),
        fs_hz: dataset.fs_hz,
        n_channels: dataset.montage.len(),
        channel_names: dataset.montage.channel_names().to_vec(),
        occipital_channels: Some(dataset.montage.occipital_names()),
        n_samples: dataset.n_samples(),
        classes: dataset.classes.clone(),
        trials,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| EegError::BadManifest(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eeg::{DEFAULT_CLASSES, STANDARD_64};

    fn classes() -> Vec<String> {
        DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect()
    }

    fn small_dataset() -> Dataset<f32> {
        let montage = Montage::with_default_occipital(vec!["Fz".into(), "Cz".into(), "O1".into(), "O2".into()]).unwrap();
        let epochs = [0usize, 3]
            .iter()
            .enumerate()
            .map(|(k, &label)| {
                let s = Array2::from_shape_fn((4, 1251), |(c, t)| (c as f32 - 1.5) * (t as f32 * 0.01 + k as f32).sin());
                Epoch::new(s, 250.0, label, TrialKind::Imagery)
            })
            .collect();
        Dataset::new("small", montage, 250.0, classes(), epochs).unwrap()
    }

    #[test]
    fn two_trial_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        save_dataset(&ds, dir.path()).unwrap();
        let back: Dataset<f32> = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.epochs[1].samples.dim(), (4, 1251));
        assert_eq!(back.labels(), vec![0, 3]);
        assert_eq!(back, ds);
    }

    #[test]
    fn empty_dataset_writes_empty_trial_list() {
        let dir = tempfile::tempdir().unwrap();
        let ds: Dataset<f32> = small_dataset().with_epochs(vec![]);
        save_dataset(&ds, dir.path()).unwrap();
        let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert!(m.trials.is_empty());
        let back: Dataset<f32> = load_dataset(dir.path()).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn short_payload_is_truncated_error() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&small_dataset(), dir.path()).unwrap();
        let f = dir.path().join(trial_file_name(1));
        let mut bytes = fs::read(&f).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&f, bytes).unwrap();
        let err = load_dataset::<f32>(dir.path()).unwrap_err();
        assert_eq!(
            err,
            EegError::TruncatedPayload { file: trial_file_name(1), expected: 4 * 1251 * 4, found: 4 * 1251 * 4 - 4 }
        );
    }

    #[test]
    fn missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset::<f32>(dir.path()), Err(EegError::MissingManifest(_))));
    }

    #[test]
    fn channel_count_disagreement_in_manifest() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&small_dataset(), dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let mut m: Manifest = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        m.n_channels = 5;
        fs::write(&p, serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(load_dataset::<f32>(dir.path()), Err(EegError::ChannelMismatch { expected: 5, found: 4 }));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&small_dataset(), dir.path()).unwrap();
        let f = dir.path().join(trial_file_name(0));
        let mut bytes = fs::read(&f).unwrap();
        bytes[8..12].copy_from_slice(&f32::INFINITY.to_le_bytes());
        fs::write(&f, bytes).unwrap();
        assert_eq!(load_dataset::<f32>(dir.path()), Err(EegError::NonFiniteSample { channel: 0, sample: 2 }));
    }

    #[test]
    fn standard_montage_manifest_loads() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = Manifest {
            name: "m64".into(),
            fs_hz: 1000.0,
            n_channels: 64,
            channel_names: STANDARD_64.iter().map(|s| s.to_string()).collect(),
            occipital_channels: None,
            n_samples: 10,
            classes: classes(),
            trials: vec![TrialEntry { file: "a.f32".into(), label: 1, kind: TrialKind::Perception }],
        };
        fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_string(&manifest).unwrap()).unwrap();
        fs::write(dir.path().join("a.f32"), vec![0u8; 64 * 10 * 4]).unwrap();
        let ds: Dataset<f64> = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.montage, Montage::standard_64());
        assert_eq!(ds.epochs[0].kind, TrialKind::Perception);
    }

    #[test]
    fn occipital_override_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = small_dataset();
        ds.montage = Montage::with_occipital_names(ds.montage.channel_names().to_vec(), &["Cz"]).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back: Dataset<f32> = load_dataset(dir.path()).unwrap();
        assert_eq!(back.montage.occipital_names(), vec!["Cz".to_string()]);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let err = save_dataset(&small_dataset(), blocker.join("sub")).unwrap_err();
        assert!(matches!(err, EegError::Io(_)));
    }
}
