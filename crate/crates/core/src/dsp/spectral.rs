use serde::{Deserialize, Serialize};

use super::DspError;
use crate::eeg::Epoch;
use crate::Scalar;

/// Band-limited power of fixed-length segments.
///
/// Each segment is mean-removed, Hann-windowed and transformed only at the
/// DFT bins inside the band; the one-sided density is then integrated over
/// those bins.
#[derive(Debug, Clone)]
pub struct BandPower<T> {
    window: Vec<T>,
    /// `(cos, sin, one_sided_factor)` tables per in-band bin.
    bins: Vec<(Vec<T>, Vec<T>, T)>,
    scale: T,
}

impl<T: Scalar> BandPower<T> {
    pub fn new(fs: f64, band: (f64, f64), window_len: usize) -> Result<Self, DspError> {
        let (lo, hi) = band;
        if !(fs.is_finite() && fs > 0.0) {
            return Err(DspError::InvalidSampleRate(fs));
        }
        if !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
            return Err(DspError::BandOutOfRange { low: lo, high: hi, nyquist: fs / 2.0 });
        }
        if window_len < 2 {
            return Err(DspError::InvalidWindow(window_len));
        }
        let n = window_len;
        let tau = 2.0 * std::f64::consts::PI;
        // Periodic Hann.
        let window: Vec<T> = (0..n).map(|i| T::lit(0.5 - 0.5 * (tau * i as f64 / n as f64).cos())).collect();
        let sum_sq: f64 = window.iter().map(|w| w.as_f64().powi(2)).sum();

        let df = fs / n as f64;
        let k_lo = (lo / df).ceil() as usize;
        let k_hi = (hi / df).floor() as usize;
        let bins = (k_lo..=k_hi)
            .map(|k| {
                let cos = (0..n).map(|i| T::lit((tau * (k * i % n) as f64 / n as f64).cos())).collect();
                let sin = (0..n).map(|i| T::lit((tau * (k * i % n) as f64 / n as f64).sin())).collect();
                let one_sided = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
                (cos, sin, T::lit(one_sided))
            })
            .collect();
        // density 1/(fs * sum w^2), integrated with bin width fs/n
        let scale = T::lit(df / (fs * sum_sq));
        Ok(BandPower { window, bins, scale })
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    /// Band power of exactly one segment of `window_len` samples.
    pub fn segment(&self, x: &[T]) -> T {
        debug_assert_eq!(x.len(), self.window.len());
        let n = T::lit(x.len() as f64);
        let mean = x.iter().copied().sum::<T>() / n;
        let tapered: Vec<T> = x.iter().zip(&self.window).map(|(&v, &w)| (v - mean) * w).collect();
        let mut total = T::zero();
        for (cos, sin, factor) in &self.bins {
            let mut re = T::zero();
            let mut im = T::zero();
            for ((&v, &c), &s) in tapered.iter().zip(cos).zip(sin) {
                re += v * c;
                im += v * s;
            }
            total += *factor * (re * re + im * im);
        }
        total * self.scale
    }

    /// Mean of overlapping segment powers.
    pub fn welch(&self, signal: &[T], step: usize) -> T {
        let w = self.window.len();
        let starts: Vec<usize> = (0..=signal.len() - w).step_by(step.max(1)).collect();
        let sum: T = starts.iter().map(|&s| self.segment(&signal[s..s + w])).sum();
        sum / T::lit(starts.len() as f64)
    }
}

/// Welch estimate of the power inside `band`, in squared signal units.
pub fn welch_band_power<T: Scalar>(
    signal: &[T],
    fs: f64,
    band: (f64, f64),
    window_len: usize,
    overlap: f64,
) -> Result<T, DspError> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(DspError::InvalidOverlap(overlap));
    }
    let estimator = BandPower::new(fs, band, window_len)?;
    if window_len > signal.len() {
        return Err(DspError::WindowTooLong { window: window_len, len: signal.len() });
    }
    let step = window_len - (overlap * window_len as f64).floor() as usize;
    Ok(estimator.welch(signal, step))
}

/// Per-channel least-squares trend of sliding-window band power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TendencyResult {
    /// Power units per second.
    pub per_channel_slope: Vec<f64>,
    pub window_len_s: f64,
    pub step_s: f64,
    pub band: (f64, f64),
}

impl TendencyResult {
    /// Mean slope over a channel subset; `None` when the subset is empty.
    pub fn mean_slope(&self, channels: &[usize]) -> Option<f64> {
        if channels.is_empty() {
            return None;
        }
        Some(channels.iter().map(|&c| self.per_channel_slope[c]).sum::<f64>() / channels.len() as f64)
    }
}

/// OLS slope of `y` against `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    sxy / sxx
}

/// Slope of windowed band power versus window-centre time for each channel.
pub fn alpha_tendency<T: Scalar>(
    epoch: &Epoch<T>,
    band: (f64, f64),
    window_len_s: f64,
    step_s: f64,
) -> Result<TendencyResult, DspError> {
    let fs = epoch.fs_hz;
    let w = (window_len_s * fs).round() as usize;
    let step = ((step_s * fs).round() as usize).max(1);
    let estimator = BandPower::<T>::new(fs, band, w)?;
    let n = epoch.n_samples();
    let n_windows = if n >= w { (n - w) / step + 1 } else { 0 };
    if n_windows < 2 {
        return Err(DspError::EpochTooShort { samples: n, window: w, step });
    }
    let centres: Vec<f64> = (0..n_windows).map(|j| (j * step) as f64 / fs + window_len_s / 2.0).collect();

    let mut slopes = Vec::with_capacity(epoch.n_channels());
    let mut buf = vec![T::zero(); n];
    for row in epoch.samples.outer_iter() {
        for (b, v) in buf.iter_mut().zip(row.iter()) {
            *b = *v;
        }
        let powers: Vec<f64> =
            (0..n_windows).map(|j| estimator.segment(&buf[j * step..j * step + w]).as_f64()).collect();
        slopes.push(ols_slope(&centres, &powers));
    }
    Ok(TendencyResult { per_channel_slope: slopes, window_len_s, step_s, band })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eeg::TrialKind;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sine(freq: f64, amp: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|t| amp * (2.0 * PI * freq * t as f64 / fs).sin()).collect()
    }

    #[test]
    fn sine_power_is_half_amplitude_squared() {
        // Oracle: a single full-length periodogram integrated over the band.
        let x = sine(10.0, 3.0, 250.0, 2500);
        let p = welch_band_power(&x, 250.0, (8.0, 13.0), 500, 0.5).unwrap();
        assert!((p - 4.5).abs() / 4.5 < 0.05, "{p}");
        let full = welch_band_power(&x, 250.0, (8.0, 13.0), 2500, 0.0).unwrap();
        assert!((full - 4.5).abs() / 4.5 < 0.01, "{full}");
    }

    #[test]
    fn zero_signal_has_zero_power() {
        let x = vec![0.0f32; 1000];
        assert_eq!(welch_band_power(&x, 250.0, (8.0, 13.0), 500, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn band_and_window_errors() {
        let x = vec![0.0f64; 100];
        assert!(matches!(
            welch_band_power(&x, 250.0, (120.0, 130.0), 50, 0.5),
            Err(DspError::BandOutOfRange { .. })
        ));
        assert_eq!(welch_band_power(&x, 250.0, (8.0, 13.0), 500, 0.5), Err(DspError::WindowTooLong { window: 500, len: 100 }));
        assert_eq!(welch_band_power(&x, 250.0, (8.0, 13.0), 50, 1.0), Err(DspError::InvalidOverlap(1.0)));
    }

    #[test]
    fn out_of_band_sine_is_small() {
        let x = sine(30.0, 1.0, 250.0, 2500);
        let p = welch_band_power(&x, 250.0, (8.0, 13.0), 500, 0.5).unwrap();
        assert!(p < 1e-4, "{p}");
    }

    #[test]
    fn sign_flip_and_amplitude_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..2000).map(|t| (2.0 * PI * 11.0 * t as f64 / 250.0).sin() + rng.gen_range(-1.0..1.0)).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let twice: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let p = welch_band_power(&x, 250.0, (8.0, 13.0), 500, 0.5).unwrap();
        let pn = welch_band_power(&neg, 250.0, (8.0, 13.0), 500, 0.5).unwrap();
        let p2 = welch_band_power(&twice, 250.0, (8.0, 13.0), 500, 0.5).unwrap();
        assert!((p - pn).abs() / p < 0.01);
        assert!((p2 - 4.0 * p).abs() / (4.0 * p) < 0.01);
    }

    fn ramp_epoch(a0: f64, a1: f64, noise: f64, seed: u64) -> Epoch<f64> {
        let fs = 250.0;
        let n = 1251;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phase: f64 = rng.gen_range(0.0..2.0 * PI);
        let s = Array2::from_shape_fn((1, n), |(_, t)| {
            let frac = t as f64 / (n - 1) as f64;
            let amp = a0 + (a1 - a0) * frac;
            amp * (2.0 * PI * 10.0 * t as f64 / fs + phase).sin()
        });
        let s = s.mapv(|v| v + noise * rng.gen_range(-1.0..1.0));
        Epoch::new(s, fs, 0, TrialKind::Imagery)
    }

    #[test]
    fn ramp_direction_sets_slope_sign() {
        let up = alpha_tendency(&ramp_epoch(1.0, 2.0, 0.0, 1), (8.0, 13.0), 1.0, 0.25).unwrap();
        let down = alpha_tendency(&ramp_epoch(2.0, 1.0, 0.0, 1), (8.0, 13.0), 1.0, 0.25).unwrap();
        assert!(up.per_channel_slope[0] > 0.0);
        assert!(down.per_channel_slope[0] < 0.0);
    }

    #[test]
    fn stationary_slope_within_three_sigma() {
        let slopes: Vec<f64> = (0..100)
            .map(|s| alpha_tendency(&ramp_epoch(1.0, 1.0, 0.5, s), (8.0, 13.0), 1.0, 0.25).unwrap().per_channel_slope[0])
            .collect();
        let mean = slopes.iter().sum::<f64>() / 100.0;
        let sd = (slopes.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
        let tau = 3.0 * sd;
        assert!(mean.abs() < tau / 3.0, "mean {mean} tau {tau}");
        let fresh = alpha_tendency(&ramp_epoch(1.0, 1.0, 0.5, 1000), (8.0, 13.0), 1.0, 0.25).unwrap();
        assert!(fresh.per_channel_slope[0].abs() < tau);
        let ramp = alpha_tendency(&ramp_epoch(1.0, 2.0, 0.5, 1001), (8.0, 13.0), 1.0, 0.25).unwrap();
        assert!(ramp.per_channel_slope[0] > tau);
    }

    #[test]
    fn short_epoch_rejected() {
        let e = Epoch::new(Array2::<f64>::zeros((1, 300)), 250.0, 0, TrialKind::Imagery);
        assert!(matches!(alpha_tendency(&e, (8.0, 13.0), 1.0, 0.25), Err(DspError::EpochTooShort { .. })));
        let e = Epoch::new(Array2::<f64>::zeros((1, 313)), 250.0, 0, TrialKind::Imagery);
        assert!(alpha_tendency(&e, (8.0, 13.0), 1.0, 0.25).is_ok());
    }

    #[test]
    fn slope_ignores_other_channels() {
        let a = ramp_epoch(1.0, 2.0, 0.3, 5);
        let b = ramp_epoch(2.0, 1.0, 0.3, 6);
        let mut stacked = Array2::zeros((2, 1251));
        stacked.row_mut(0).assign(&a.samples.row(0));
        stacked.row_mut(1).assign(&b.samples.row(0));
        let mut swapped = stacked.clone();
        swapped.row_mut(0).assign(&b.samples.row(0));
        swapped.row_mut(1).assign(&a.samples.row(0));
        let t1 = alpha_tendency(&a.with_samples(stacked), (8.0, 13.0), 1.0, 0.25).unwrap();
        let t2 = alpha_tendency(&a.with_samples(swapped), (8.0, 13.0), 1.0, 0.25).unwrap();
        assert_eq!(t1.per_channel_slope[0], t2.per_channel_slope[1]);
        assert_eq!(t1.per_channel_slope[1], t2.per_channel_slope[0]);
    }

    #[test]
    fn ols_slope_exact_on_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        assert!((ols_slope(&x, &y) - 2.0).abs() < 1e-15);
    }
}
