//! Stratified cross-validation of the two training regimes.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::eeg::{Dataset, EegError, Epoch, TrialKind};
use crate::models::build_proposed_net;
use crate::nn::{AdamConfig, Model, ModelSpec, NnError, OptimizerState, Reduction, Tensor4};
use crate::seed::{derive_seed, stream_id, stream_rng};
use crate::transform::{assemble_training_set, minmax_normalize, NormScope, Provenance, Regime, ReversalConfig, TransformError};

const TAG_FOLDS: u32 = 1;
const TAG_MODEL: u32 = 2;
const TAG_VALIDATION: u32 = 3;
const TAG_SHUFFLE: u32 = 4;
const TAG_DROPOUT: u32 = 5;

#[derive(Debug, Error, PartialEq)]
pub enum ExperimentError {
    #[error("class {class} has {count} trials, fewer than {k} folds")]
    TooFewPerClass { class: usize, count: usize, k: usize },
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("incompatible datasets: {0}")]
    IncompatibleDatasets(String),
    #[error("training diverged in epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eeg(#[from] EegError),
}

impl From<std::io::Error> for ExperimentError {
    fn from(e: std::io::Error) -> Self {
        ExperimentError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Share of each training fold held out (stratified) for early stopping.
    pub validation_fraction: f64,
    pub optimizer: AdamConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
            validation_fraction: 0.1,
            optimizer: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub folds: usize,
    pub seed: u64,
    pub regimes: Vec<Regime>,
    pub reversal: ReversalConfig,
    pub scope: NormScope,
    pub training: TrainingConfig,
    /// Channel names to keep, in order; `None` keeps the whole montage.
    pub channels: Option<Vec<String>>,
    /// Train folds concurrently. Results do not depend on this flag.
    #[serde(default)]
    pub parallel_folds: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            folds: 5,
            seed: 0,
            regimes: vec![Regime::ViOnly, Regime::ViPlusVp],
            reversal: ReversalConfig::default(),
            scope: NormScope::default(),
            training: TrainingConfig::default(),
            channels: None,
            parallel_folds: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::InvalidConfig(m.to_string()));
        if self.folds < 2 {
            return bad("at least two folds are required");
        }
        if self.regimes.is_empty() {
            return bad("no regimes requested");
        }
        let t = &self.training;
        if t.batch_size == 0 || t.max_epochs == 0 {
            return bad("batch size and epoch limit must be positive");
        }
        if !(0.0..1.0).contains(&t.validation_fraction) {
            return bad("validation fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Stratified, disjoint, exhaustive folds of `labels` indices.
///
/// Each class is shuffled and dealt round-robin, continuing the rotation
/// across classes so fold sizes differ by at most one.
pub fn kfold_split(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, ExperimentError> {
    if k < 2 {
        return Err(ExperimentError::InvalidConfig("at least two folds are required".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if let Some((&class, members)) = by_class.iter().find(|(_, m)| m.len() < k) {
        return Err(ExperimentError::TooFewPerClass { class, count: members.len(), k });
    }
    let mut rng = stream_rng(seed, stream_id(TAG_FOLDS, 0));
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Splits `indices` into (kept, held out), holding out `fraction` of each
/// class (rounded, at least one when the fraction is positive and the
/// class has two or more members).
pub fn stratified_holdout(indices: &[usize], labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        by_class.entry(labels[i]).or_default().push(i);
    }
    let mut rng = stream_rng(seed, stream_id(TAG_VALIDATION, 0));
    let (mut kept, mut held) = (Vec::new(), Vec::new());
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        let mut n_held = (members.len() as f64 * fraction).round() as usize;
        if fraction > 0.0 && members.len() >= 2 {
            n_held = n_held.max(1);
        }
        n_held = n_held.min(members.len().saturating_sub(1));
        held.extend_from_slice(&members[..n_held]);
        kept.extend_from_slice(&members[n_held..]);
    }
    kept.sort_unstable();
    held.sort_unstable();
    (kept, held)
}

/// Stacks trials as single-map network inputs.
pub fn to_batch(epochs: &[&Epoch<f32>]) -> Tensor4<f32> {
    Tensor4::from_planes(epochs.iter().map(|e| &e.samples))
}

/// Per-epoch losses recorded by [`train_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
}

fn mean_loss(model: &Model<f32>, epochs: &[Epoch<f32>], batch_size: usize) -> Result<f64, ExperimentError> {
    let mut total = 0.0;
    for chunk in epochs.chunks(batch_size) {
        let refs: Vec<&Epoch<f32>> = chunk.iter().collect();
        let labels: Vec<usize> = chunk.iter().map(|e| e.label).collect();
        total += model.loss(&to_batch(&refs), &labels, false, 0, Reduction::Sum)? as f64;
    }
    Ok(total / epochs.len() as f64)
}

/// Mini-batch training with early stopping on validation loss.
///
/// With an empty validation set every epoch runs and the final weights are
/// kept.
pub fn train_model(
    model: &mut Model<f32>,
    train: &[Epoch<f32>],
    validation: &[Epoch<f32>],
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<TrainingLog, ExperimentError> {
    let mut opt = OptimizerState::new(model.params(), cfg.optimizer);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainingLog { train_loss: Vec::new(), validation_loss: Vec::new(), best_epoch: 0 };
    let mut best: Option<(f64, crate::nn::ParamSet<f32>)> = None;
    let mut stale = 0;
    let mut step = 0u32;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut stream_rng(seed, stream_id(TAG_SHUFFLE, epoch as u32)));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&Epoch<f32>> = chunk.iter().map(|&i| &train[i]).collect();
            let labels: Vec<usize> = refs.iter().map(|e| e.label).collect();
            let dropout_seed = derive_seed(seed, stream_id(TAG_DROPOUT, step));
            step += 1;
            let (loss, grads) = model.loss_and_gradients(&to_batch(&refs), &labels, true, dropout_seed, Reduction::Mean)?;
            let loss = loss as f64;
            if !loss.is_finite() {
                return Err(ExperimentError::Diverged { epoch: epoch + 1, loss });
            }
            opt.step(model.params_mut(), &grads)?;
            epoch_loss += loss * chunk.len() as f64;
        }
        log.train_loss.push(epoch_loss / train.len().max(1) as f64);

        if validation.is_empty() {
            log.best_epoch = epoch + 1;
            continue;
        }
        let v = mean_loss(model, validation, cfg.batch_size)?;
        log.validation_loss.push(v);
        log::debug!("epoch {} train {:.4} validation {:.4}", epoch + 1, log.train_loss[epoch], v);
        if best.as_ref().map_or(true, |(b, _)| v < *b) {
            best = Some((v, model.params().clone()));
            log.best_epoch = epoch + 1;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        *model.params_mut() = params;
    }
    Ok(log)
}

/// Most probable class for every trial.
pub fn predict(model: &Model<f32>, epochs: &[Epoch<f32>], batch_size: usize) -> Result<Vec<usize>, ExperimentError> {
    let mut out = Vec::with_capacity(epochs.len());
    for chunk in epochs.chunks(batch_size.max(1)) {
        let refs: Vec<&Epoch<f32>> = chunk.iter().collect();
        let probs = model.forward(&to_batch(&refs), false, 0)?;
        for row in probs.rows() {
            let mut arg = 0;
            for (j, &p) in row.iter().enumerate() {
                if p > row[arg] {
                    arg = j;
                }
            }
            out.push(arg);
        }
    }
    Ok(out)
}

/// Outcome of one held-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub accuracy: f64,
    /// Indices into the imagery dataset.
    pub test_indices: Vec<usize>,
    pub test_provenance: Vec<Provenance>,
    pub n_train_imagery: usize,
    pub n_train_perception: usize,
    pub n_validation: usize,
    pub log: TrainingLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeResult {
    /// Held-out accuracy per fold.
    pub folds: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation across folds.
    pub std: f64,
    pub details: Vec<FoldResult>,
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub model: ModelSpec,
    /// Keyed by regime name (`vi_only`, `vi_plus_vp`).
    pub regimes: BTreeMap<String, RegimeResult>,
    pub wall_clock_s: f64,
}

impl ExperimentReport {
    pub fn regime(&self, r: Regime) -> Option<&RegimeResult> {
        self.regimes.get(r.key())
    }

    /// Equality of everything except the wall-clock time.
    pub fn same_results(&self, other: &ExperimentReport) -> bool {
        self.config == other.config && self.seed == other.seed && self.model == other.model && self.regimes == other.regimes
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), ExperimentError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// One row per model with mean/std columns per regime.
    pub fn table_csv(&self, model_name: &str) -> String {
        let mut header = vec!["model".to_string()];
        let mut row = vec![model_name.to_string()];
        for (key, r) in &self.regimes {
            header.push(format!("{key}_mean"));
            header.push(format!("{key}_std"));
            row.push(format!("{:.4}", r.mean));
            row.push(format!("{:.4}", r.std));
        }
        format!("{}\n{}\n", header.join(","), row.join(","))
    }

    /// `regime,fold,accuracy` rows.
    pub fn folds_csv(&self) -> String {
        let mut out = String::from("regime,fold,accuracy\n");
        for (key, r) in &self.regimes {
            for (i, a) in r.folds.iter().enumerate() {
                out.push_str(&format!("{key},{i},{a}\n"));
            }
        }
        out
    }
}

fn check_datasets(vi: &Dataset<f32>, vp: &Dataset<f32>) -> Result<(), ExperimentError> {
    let bad = |m: String| Err(ExperimentError::IncompatibleDatasets(m));
    if vi.montage != vp.montage {
        return bad("montages differ".into());
    }
    if vi.fs_hz != vp.fs_hz {
        return bad(format!("sampling rates {} and {} Hz", vi.fs_hz, vp.fs_hz));
    }
    if !vp.is_empty() && vi.n_samples() != vp.n_samples() {
        return bad(format!("trial lengths {} and {}", vi.n_samples(), vp.n_samples()));
    }
    if vi.classes != vp.classes {
        return bad("class lists differ".into());
    }
    if let Some(i) = vi.epochs.iter().position(|e| e.kind != TrialKind::Imagery) {
        return bad(format!("imagery dataset trial {i} is not imagery"));
    }
    if let Some(i) = vp.epochs.iter().position(|e| e.kind != TrialKind::Perception) {
        return bad(format!("perception dataset trial {i} is not perception"));
    }
    Ok(())
}

fn select(ds: &Dataset<f32>, names: &Option<Vec<String>>) -> Result<Dataset<f32>, ExperimentError> {
    let Some(names) = names else { return Ok(ds.clone()) };
    let idx = names
        .iter()
        .map(|n| ds.montage.index_of(n).ok_or_else(|| EegError::UnknownChannel(n.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ds.select_channels(&idx)?)
}

/// Builds a fresh model for `(n_channels, seed)`.
pub type ModelFactory<'a> = dyn Fn(usize, u64) -> Result<Model<f32>, NnError> + Sync + 'a;

/// Cross-validates the proposed network.
pub fn run_experiment(vi: &Dataset<f32>, vp: &Dataset<f32>, config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    run_experiment_with(vi, vp, config, &|c, s| build_proposed_net(c, s))
}

/// Cross-validates any model produced by `factory`.
///
/// Folds, validation splits, initial weights and shuffles depend only on the
/// seed and fold index, so both regimes see the same folds and start from
/// the same weights.
pub fn run_experiment_with(
    vi: &Dataset<f32>,
    vp: &Dataset<f32>,
    config: &ExperimentConfig,
    factory: &ModelFactory<'_>,
) -> Result<ExperimentReport, ExperimentError> {
    let started = Instant::now();
    config.validate()?;
    check_datasets(vi, vp)?;
    let vi = select(vi, &config.channels)?;
    let vp = select(vp, &config.channels)?;
    let n_channels = vi.montage.len();
    let n_classes = vi.classes.len();
    let labels = vi.labels();
    let folds = kfold_split(&labels, config.folds, config.seed)?;
    let model_spec = factory(n_channels, 0)?.spec().clone();

    let run_fold = |regime: Regime, fold: usize| -> Result<FoldResult, ExperimentError> {
        let test_idx = &folds[fold];
        let train_idx: Vec<usize> = (0..vi.len()).filter(|i| !test_idx.contains(i)).collect();
        let fold_seed = derive_seed(config.seed, stream_id(TAG_MODEL, fold as u32));
        let (fit_idx, val_idx) =
            stratified_holdout(&train_idx, &labels, config.training.validation_fraction, fold_seed);

        let fit: Vec<Epoch<f32>> = fit_idx.iter().map(|&i| vi.epochs[i].clone()).collect();
        let set = assemble_training_set(&fit, &vp.epochs, regime, config.reversal, config.scope, n_classes)?;
        let normalize = |idx: &[usize]| -> Result<Vec<Epoch<f32>>, ExperimentError> {
            idx.iter().map(|&i| Ok(minmax_normalize(&vi.epochs[i], config.scope)?.0)).collect()
        };
        let validation = normalize(&val_idx)?;
        let test = normalize(test_idx)?;

        let mut model = factory(n_channels, fold_seed)?;
        let log = train_model(&mut model, &set.epochs, &validation, &config.training, fold_seed)?;
        let predicted = predict(&model, &test, config.training.batch_size)?;
        let correct = predicted.iter().zip(test.iter()).filter(|(p, e)| **p == e.label).count();
        let accuracy = correct as f64 / test.len() as f64;
        log::info!("{} fold {}: accuracy {:.4} (best epoch {})", regime.key(), fold, accuracy, log.best_epoch);
        Ok(FoldResult {
            fold,
            accuracy,
            test_indices: test_idx.clone(),
            test_provenance: test
                .iter()
                .map(|e| match e.kind {
                    TrialKind::Imagery => Provenance::Imagery,
                    TrialKind::Perception => Provenance::ModifiedPerception,
                })
                .collect(),
            n_train_imagery: set.count(Provenance::Imagery),
            n_train_perception: set.count(Provenance::ModifiedPerception),
            n_validation: validation.len(),
            log,
        })
    };

    let jobs: Vec<(Regime, usize)> =
        config.regimes.iter().flat_map(|&r| (0..config.folds).map(move |f| (r, f))).collect();
    let results: Vec<FoldResult> = if config.parallel_folds {
        jobs.par_iter().map(|&(r, f)| run_fold(r, f)).collect::<Result<_, _>>()?
    } else {
        jobs.iter().map(|&(r, f)| run_fold(r, f)).collect::<Result<_, _>>()?
    };

    let mut regimes = BTreeMap::new();
    for (ri, regime) in config.regimes.iter().enumerate() {
        let details: Vec<FoldResult> = results[ri * config.folds..(ri + 1) * config.folds].to_vec();
        let accs: Vec<f64> = details.iter().map(|d| d.accuracy).collect();
        let (mean, std) = mean_std(&accs);
        regimes.insert(regime.key().to_string(), RegimeResult { folds: accs, mean, std, details });
    }
    Ok(ExperimentReport {
        config: config.clone(),
        seed: config.seed,
        model: model_spec,
        regimes,
        wall_clock_s: started.elapsed().as_secs_f64(),
    })
}

/// One-sided paired t-test of `treatment > baseline`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub n: usize,
    pub mean_gap: f64,
    pub std_gap: f64,
    pub t: f64,
    pub p_value: f64,
}

pub fn paired_t_test_greater(baseline: &[f64], treatment: &[f64]) -> PairedTTest {
    assert_eq!(baseline.len(), treatment.len(), "paired samples differ in length");
    assert!(baseline.len() >= 2, "need at least two pairs");
    let gaps: Vec<f64> = treatment.iter().zip(baseline).map(|(t, b)| t - b).collect();
    let n = gaps.len();
    let (mean_gap, std_gap) = mean_std(&gaps);
    if std_gap == 0.0 {
        let p = if mean_gap > 0.0 { 0.0 } else { 1.0 };
        let t = if mean_gap == 0.0 { 0.0 } else { mean_gap.signum() * f64::INFINITY };
        return PairedTTest { n, mean_gap, std_gap, t, p_value: p };
    }
    let t = mean_gap / (std_gap / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    PairedTTest { n, mean_gap, std_gap, t, p_value: 1.0 - dist.cdf(t) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_folds() {
        let labels: Vec<usize> = (0..200).map(|i| i % 4).collect();
        let folds = kfold_split(&labels, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..200).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.len(), 40);
            for k in 0..4 {
                assert_eq!(f.iter().filter(|&&i| labels[i] == k).count(), 10);
            }
        }
        assert_eq!(folds, kfold_split(&labels, 5, 3).unwrap());
        assert_ne!(folds, kfold_split(&labels, 5, 4).unwrap());
    }

    #[test]
    fn too_few_per_class() {
        let mut labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        labels.extend([2, 2, 2]);
        assert_eq!(kfold_split(&labels, 5, 0), Err(ExperimentError::TooFewPerClass { class: 2, count: 3, k: 5 }));
    }

    #[test]
    fn holdout_is_stratified() {
        let labels: Vec<usize> = (0..160).map(|i| i % 4).collect();
        let idx: Vec<usize> = (0..160).collect();
        let (kept, held) = stratified_holdout(&idx, &labels, 0.1, 1);
        assert_eq!(held.len(), 16);
        assert_eq!(kept.len(), 144);
        for k in 0..4 {
            assert_eq!(held.iter().filter(|&&i| labels[i] == k).count(), 4);
        }
        let (kept, held) = stratified_holdout(&idx, &labels, 0.0, 1);
        assert!(held.is_empty());
        assert_eq!(kept.len(), 160);
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[0.5, 0.7, 0.6]);
        assert!((m - 0.6).abs() < 1e-15);
        assert!((s - 0.1).abs() < 1e-15);
        assert_eq!(mean_std(&[0.3]), (0.3, 0.0));
    }

    #[test]
    fn paired_test_against_reference_values() {
        // gaps 0.1, 0.2, 0.3, 0.2: mean 0.2, sd 0.08165, t = 4.899, df 3.
        let base = [0.5, 0.5, 0.5, 0.5];
        let treat = [0.6, 0.7, 0.8, 0.7];
        let r = paired_t_test_greater(&base, &treat);
        assert!((r.t - 4.898979485566356).abs() < 1e-9);
        // scipy.stats.t.sf(4.898979, 3)
        assert!((r.p_value - 0.008138301729714).abs() < 1e-9, "{}", r.p_value);
        let same = paired_t_test_greater(&base, &base);
        assert_eq!(same.p_value, 1.0);
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::default();
        c.folds = 1;
        assert!(c.validate().is_err());
        let c = ExperimentConfig { regimes: vec![], ..ExperimentConfig::default() };
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }
}
