use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::DspError;
use crate::eeg::Epoch;
use crate::Scalar;

/// Band-pass request: `0 < low_hz < high_hz < fs_hz / 2`, `order >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
    pub fs_hz: f64,
}

impl FilterSpec {
    pub fn new(low_hz: f64, high_hz: f64, order: usize, fs_hz: f64) -> Self {
        FilterSpec { low_hz, high_hz, order, fs_hz }
    }

    /// 4th-order 8-13 Hz alpha band at `fs_hz`.
    pub fn alpha(fs_hz: f64) -> Self {
        FilterSpec::new(8.0, 13.0, 4, fs_hz)
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if !(self.fs_hz.is_finite() && self.fs_hz > 0.0) {
            return Err(DspError::InvalidSampleRate(self.fs_hz));
        }
        if self.order == 0 {
            return Err(DspError::InvalidOrder);
        }
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz) {
            return Err(DspError::InvalidBand { low: self.low_hz, high: self.high_hz });
        }
        let nyquist = self.fs_hz / 2.0;
        if self.high_hz >= nyquist {
            return Err(DspError::NyquistViolation { high: self.high_hz, nyquist });
        }
        Ok(())
    }
}

/// One second-order section `[b0, b1, b2, 1, a1, a2]`.
pub type Section = [f64; 6];

/// IIR coefficients in both transfer-function and cascaded-section form.
///
/// Filtering always runs on the sections; `numerator`/`denominator` are the
/// expanded polynomials (leading denominator coefficient 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCoefficients {
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
    sections: Vec<Section>,
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn quadratic_roots(a1: f64, a2: f64) -> [Complex64; 2] {
    // z^2 + a1 z + a2
    let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
    [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
}

impl FilterCoefficients {
    /// Builds coefficients from normalized sections (`a0 == 1`).
    pub fn from_sections(sections: Vec<Section>) -> Self {
        let mut numerator = vec![1.0];
        let mut denominator = vec![1.0];
        for s in &sections {
            numerator = poly_mul(&numerator, &s[0..3]);
            denominator = poly_mul(&denominator, &s[3..6]);
        }
        FilterCoefficients { numerator, denominator, sections }
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    /// Poles of every section.
    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| quadratic_roots(s[4], s[5])).collect()
    }

    pub fn max_pole_magnitude(&self) -> f64 {
        self.poles().iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.max_pole_magnitude() < 1.0
    }

    /// Steady-state section states for a unit step input.
    fn step_initial_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let [b0, b1, b2, _, a1, a2] = *s;
                let r0 = b1 - a1 * b0;
                let r1 = b2 - a2 * b0;
                let z0 = (r0 + r1) / (1.0 + a1 + a2);
                let z1 = r1 - a2 * z0;
                let zi = [scale * z0, scale * z1];
                scale *= (b0 + b1 + b2) / (1.0 + a1 + a2);
                zi
            })
            .collect()
    }

    fn run(&self, x: &mut [f64], state: Option<&[[f64; 2]]>, x0: f64) {
        for (k, s) in self.sections.iter().enumerate() {
            let [b0, b1, b2, _, a1, a2] = *s;
            let (mut z0, mut z1) = state.map_or((0.0, 0.0), |st| (st[k][0] * x0, st[k][1] * x0));
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z0;
                z0 = b1 * xin - a1 * y + z1;
                z1 = b2 * xin - a2 * y;
                *v = y;
            }
        }
    }

    /// Causal filtering from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.run(&mut y, None, 0.0);
        y
    }

    /// Forward-backward filtering with odd-extension padding and
    /// steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.step_initial_state();
        let x0 = ext[0];
        self.run(&mut ext, Some(&zi), x0);
        ext.reverse();
        let y0 = ext[0];
        self.run(&mut ext, Some(&zi), y0);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Butterworth band-pass via analog prototype, band transformation and
/// bilinear mapping with pre-warped edges.
pub fn design_bandpass(spec: &FilterSpec) -> Result<FilterCoefficients, DspError> {
    spec.validate()?;
    let n = spec.order;
    let fs = spec.fs_hz;
    let fs2 = 2.0 * fs;
    let warp = |f: f64| fs2 * (PI * f / fs).tan();
    let (wl, wh) = (warp(spec.low_hz), warp(spec.high_hz));
    let bw = wh - wl;
    let w0 = (wl * wh).sqrt();

    // Analog low-pass prototype poles on the left half of the unit circle.
    let proto: Vec<Complex64> = (0..n)
        .map(|k| {
            let m = -(n as f64) + 1.0 + 2.0 * k as f64;
            -Complex64::from_polar(1.0, PI * m / (2.0 * n as f64))
        })
        .collect();

    let mut analog = Vec::with_capacity(2 * n);
    for p in &proto {
        let half = p * (bw / 2.0);
        let root = (half * half - w0 * w0).sqrt();
        analog.push(half + root);
        analog.push(half - root);
    }

    let digital: Vec<Complex64> = analog.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();
    let denom_prod = analog.iter().fold(Complex64::new(1.0, 0.0), |acc, p| acc * (fs2 - p));
    // n analog zeros at the origin, n at infinity.
    let gain = (Complex64::new(bw.powi(n as i32) * fs2.powi(n as i32), 0.0) / denom_prod).re;

    let pairs = pair_conjugates(&digital);
    let mut sections: Vec<Section> = pairs
        .iter()
        .map(|&(p, q)| {
            let a1 = -(p + q).re;
            let a2 = (p * q).re;
            [1.0, 0.0, -1.0, 1.0, a1, a2]
        })
        .collect();
    // Poles nearest the unit circle go last.
    sections.sort_by(|a, b| a[5].abs().total_cmp(&b[5].abs()));
    for c in &mut sections[0][0..3] {
        *c *= gain;
    }

    let coeffs = FilterCoefficients::from_sections(sections);
    let max_pole = coeffs.max_pole_magnitude();
    if max_pole >= 1.0 {
        return Err(DspError::UnstableFilter { max_pole });
    }
    Ok(coeffs)
}

fn pair_conjugates(roots: &[Complex64]) -> Vec<(Complex64, Complex64)> {
    const TOL: f64 = 1e-12;
    let mut upper: Vec<Complex64> = roots.iter().copied().filter(|r| r.im > TOL).collect();
    upper.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    let mut real: Vec<f64> = roots.iter().filter(|r| r.im.abs() <= TOL).map(|r| r.re).collect();
    real.sort_by(|a, b| a.total_cmp(b));
    let mut pairs: Vec<_> = upper.into_iter().map(|p| (p, p.conj())).collect();
    pairs.extend(real.chunks(2).map(|c| (Complex64::new(c[0], 0.0), Complex64::new(*c.get(1).unwrap_or(&0.0), 0.0))));
    pairs
}

/// Filters every channel independently.
pub fn filter_epoch<T: Scalar>(
    epoch: &Epoch<T>,
    coeffs: &FilterCoefficients,
    zero_phase: bool,
) -> Result<Epoch<T>, DspError> {
    let max_pole = coeffs.max_pole_magnitude();
    if max_pole >= 1.0 {
        return Err(DspError::UnstableFilter { max_pole });
    }
    let (n_ch, n_t) = epoch.samples.dim();
    let mut out = Array2::<T>::zeros((n_ch, n_t));
    for (src, mut dst) in epoch.samples.outer_iter().zip(out.outer_iter_mut()) {
        let x: Vec<f64> = src.iter().map(|v| v.as_f64()).collect();
        let y = if zero_phase { coeffs.filtfilt(&x) } else { coeffs.filter(&x) };
        for (d, v) in dst.iter_mut().zip(y) {
            *d = T::lit(v);
        }
    }
    Ok(epoch.with_samples(out))
}

/// Integer decimation; keeps every `fs / target_fs`-th sample.
///
/// The signal must already be band-limited below `target_fs / 2`.
pub fn resample<T: Scalar>(epoch: &Epoch<T>, target_fs: f64) -> Result<Epoch<T>, DspError> {
    if !(target_fs.is_finite() && target_fs > 0.0) {
        return Err(DspError::InvalidSampleRate(target_fs));
    }
    let ratio = epoch.fs_hz / target_fs;
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-9 * ratio.max(1.0) {
        return Err(DspError::NonIntegerRatio { fs: epoch.fs_hz, target: target_fs });
    }
    let factor = factor as usize;
    if factor == 1 {
        return Ok(epoch.clone());
    }
    let kept = epoch.n_samples() / factor;
    let samples = Array2::from_shape_fn((epoch.n_channels(), kept), |(c, t)| epoch.samples[[c, t * factor]]);
    Ok(Epoch { samples, fs_hz: target_fs, label: epoch.label, kind: epoch.kind })
}
