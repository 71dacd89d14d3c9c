//! Min-max normalization, perception reversal, and training-set assembly for
//! the two regimes (imagery only, imagery plus modified perception).

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eeg::{Epoch, TrialKind};
use crate::Scalar;

/// Values may exceed `[0, 1]` by this much before reversal rejects them.
pub const RANGE_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("constant {unit} {index}: max equals min ({value})")]
    DegenerateRange { unit: &'static str, index: usize, value: f64 },
    #[error("value {value} at channel {channel}, index {sample} outside [0, 1]")]
    InputOutOfRange { channel: usize, sample: usize, value: f64 },
    #[error("epoch {index} has shape {found:?} (fs {found_fs}), expected {expected:?} (fs {expected_fs})")]
    ShapeMismatch { index: usize, expected: (usize, usize), found: (usize, usize), expected_fs: f64, found_fs: f64 },
    #[error("epoch {index} has label {label} but only {n_classes} classes exist")]
    LabelOutOfRange { index: usize, label: usize, n_classes: usize },
    #[error("epoch {index} is {found} but {expected} was expected")]
    WrongKind { index: usize, expected: TrialKind, found: TrialKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    #[default]
    PerChannel,
    PerTrial,
}

/// Extrema used by one normalization, one entry per scope unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub scope: NormScope,
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl NormRecord {
    /// Maps normalized samples back to the original scale.
    pub fn invert<T: Scalar>(&self, epoch: &Epoch<T>) -> Epoch<T> {
        let mut out = epoch.samples.clone();
        for (c, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let u = match self.scope {
                NormScope::PerChannel => c,
                NormScope::PerTrial => 0,
            };
            let (lo, hi) = (T::lit(self.mins[u]), T::lit(self.maxs[u]));
            row.mapv_inplace(|v| v * (hi - lo) + lo);
        }
        epoch.with_samples(out)
    }
}

fn extrema<'a, T: Scalar>(values: impl Iterator<Item = &'a T>) -> (T, T) {
    values.fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// `(x - min) / (max - min)` within each scope unit.
pub fn minmax_normalize<T: Scalar>(epoch: &Epoch<T>, scope: NormScope) -> Result<(Epoch<T>, NormRecord), TransformError> {
    let x = &epoch.samples;
    let units: Vec<(T, T)> = match scope {
        NormScope::PerChannel => x.axis_iter(Axis(0)).map(|row| extrema(row.iter())).collect(),
        NormScope::PerTrial => vec![extrema(x.iter())],
    };
    let unit_name = match scope {
        NormScope::PerChannel => "channel",
        NormScope::PerTrial => "trial",
    };
    for (index, &(lo, hi)) in units.iter().enumerate() {
        if !(hi > lo) {
            return Err(TransformError::DegenerateRange { unit: unit_name, index, value: lo.as_f64() });
        }
    }
    let out = Array2::from_shape_fn(x.dim(), |(c, t)| {
        let (lo, hi) = match scope {
            NormScope::PerChannel => units[c],
            NormScope::PerTrial => units[0],
        };
        (x[[c, t]] - lo) / (hi - lo)
    });
    let record = NormRecord {
        scope,
        mins: units.iter().map(|u| u.0.as_f64()).collect(),
        maxs: units.iter().map(|u| u.1.as_f64()).collect(),
    };
    Ok((epoch.with_samples(out), record))
}

/// Reference matrix subtracted from during reversal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    #[default]
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReversalConfig {
    pub reference: Reference,
}

impl ReversalConfig {
    pub fn zeros() -> Self {
        ReversalConfig { reference: Reference::Zeros }
    }

    pub fn ones() -> Self {
        ReversalConfig { reference: Reference::Ones }
    }

    fn value(&self) -> f64 {
        match self.reference {
            Reference::Zeros => 0.0,
            Reference::Ones => 1.0,
        }
    }
}

/// `reference - x` for a normalized epoch.
pub fn reverse_modify<T: Scalar>(epoch_norm: &Epoch<T>, config: ReversalConfig) -> Result<Epoch<T>, TransformError> {
    let slack = T::lit(RANGE_SLACK);
    for ((channel, sample), &v) in epoch_norm.samples.indexed_iter() {
        if !(v >= -slack && v <= T::one() + slack) {
            return Err(TransformError::InputOutOfRange { channel, sample, value: v.as_f64() });
        }
    }
    let r = T::lit(config.value());
    Ok(epoch_norm.with_samples(epoch_norm.samples.mapv(|v| r - v)))
}

/// Normalization followed by reversal, as applied to perception trials.
pub fn modify_perception<T: Scalar>(
    epoch: &Epoch<T>,
    scope: NormScope,
    reversal: ReversalConfig,
) -> Result<Epoch<T>, TransformError> {
    let (norm, _) = minmax_normalize(epoch, scope)?;
    reverse_modify(&norm, reversal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    ViOnly,
    ViPlusVp,
}

impl Regime {
    pub fn key(&self) -> &'static str {
        match self {
            Regime::ViOnly => "vi_only",
            Regime::ViPlusVp => "vi_plus_vp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Imagery,
    ModifiedPerception,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet<T> {
    pub epochs: Vec<Epoch<T>>,
    pub regime: Regime,
    pub provenance: Vec<Provenance>,
}

impl<T> TrainSet<T> {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn count(&self, p: Provenance) -> usize {
        self.provenance.iter().filter(|&&x| x == p).count()
    }
}

fn check_inputs<T: Scalar>(
    imagery: &[Epoch<T>],
    perception: &[Epoch<T>],
    n_classes: usize,
) -> Result<(), TransformError> {
    let Some(first) = imagery.first().or(perception.first()) else {
        return Ok(());
    };
    let expected = first.samples.dim();
    let expected_fs = first.fs_hz;
    let tagged = imagery
        .iter()
        .map(|e| (e, TrialKind::Imagery))
        .chain(perception.iter().map(|e| (e, TrialKind::Perception)));
    for (index, (e, kind)) in tagged.enumerate() {
        if e.samples.dim() != expected || e.fs_hz != expected_fs {
            return Err(TransformError::ShapeMismatch {
                index,
                expected,
                found: e.samples.dim(),
                expected_fs,
                found_fs: e.fs_hz,
            });
        }
        if e.label >= n_classes {
            return Err(TransformError::LabelOutOfRange { index, label: e.label, n_classes });
        }
        if e.kind != kind {
            return Err(TransformError::WrongKind { index, expected: kind, found: e.kind });
        }
    }
    Ok(())
}

/// Builds the training set for `regime`.
///
/// Imagery trials are normalized. Under [`Regime::ViPlusVp`] every perception
/// trial is normalized, reversed and appended with its label unchanged.
pub fn assemble_training_set<T: Scalar>(
    imagery_train: &[Epoch<T>],
    perception_all: &[Epoch<T>],
    regime: Regime,
    reversal: ReversalConfig,
    scope: NormScope,
    n_classes: usize,
) -> Result<TrainSet<T>, TransformError> {
    let perception: &[Epoch<T>] = match regime {
        Regime::ViOnly => &[],
        Regime::ViPlusVp => perception_all,
    };
    check_inputs(imagery_train, perception, n_classes)?;

    let mut epochs = Vec::with_capacity(imagery_train.len() + perception.len());
    let mut provenance = Vec::with_capacity(epochs.capacity());
    for e in imagery_train {
        epochs.push(minmax_normalize(e, scope)?.0);
        provenance.push(Provenance::Imagery);
    }
    for e in perception {
        epochs.push(modify_perception(e, scope, reversal)?);
        provenance.push(Provenance::ModifiedPerception);
    }
    Ok(TrainSet { epochs, regime, provenance })
}
