//! Motion-quality metrics: zero-phase Butterworth smoothing, speed profiles,
//! spectral arc length (SPARC), completion time and IQR outlier screening.

use nalgebra::Vector3;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::{secs, TrialRecord};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cutoff {fc} Hz must lie in (0, {nyquist}) Hz")]
    BadCutoff { fc: f64, nyquist: f64 },
    #[error("sampling rate must be positive, got {0}")]
    BadRate(f64),
    #[error("need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("speed profile is identically zero")]
    ZeroSpeed,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("empty input")]
    Empty,
    #[error("invalid SPARC parameters: {0}")]
    InvalidParams(&'static str),
}

/// Direct-form coefficients of a first-order IIR section:
/// `y[n] = b0 x[n] + b1 x[n-1] - a1 y[n-1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstOrderCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub a1: f64,
}

/// First-order Butterworth low-pass via the prewarped bilinear transform.
pub fn butterworth_lowpass(fc: f64, fs: f64) -> Result<FirstOrderCoeffs, MetricsError> {
    if !(fs > 0.0) || !fs.is_finite() {
        return Err(MetricsError::BadRate(fs));
    }
    if !(fc > 0.0 && fc < fs / 2.0) {
        return Err(MetricsError::BadCutoff { fc, nyquist: fs / 2.0 });
    }
    let k = (std::f64::consts::PI * fc / fs).tan();
    let b = k / (1.0 + k);
    Ok(FirstOrderCoeffs {
        b0: b,
        b1: b,
        a1: (k - 1.0) / (1.0 + k),
    })
}

/// One causal pass, initialised at steady state for the first sample so a
/// constant input passes through untouched.
pub fn filter_pass(x: &[f64], c: &FirstOrderCoeffs) -> Vec<f64> {
    let Some(&x0) = x.first() else {
        return Vec::new();
    };
    let (mut x_prev, mut y_prev) = (x0, x0);
    x.iter()
        .map(|&xn| {
            let y = c.b0 * xn + c.b1 * x_prev - c.a1 * y_prev;
            x_prev = xn;
            y_prev = y;
            y
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    #[default]
    ZeroPhase,
    Causal,
}

/// Low-pass `x` at `fc`; zero-phase runs the section forward then backward.
pub fn lowpass_with(x: &[f64], fc: f64, fs: f64, mode: FilterMode) -> Result<Vec<f64>, MetricsError> {
    let c = butterworth_lowpass(fc, fs)?;
    let mut y = filter_pass(x, &c);
    if mode == FilterMode::ZeroPhase {
        y.reverse();
        y = filter_pass(&y, &c);
        y.reverse();
    }
    Ok(y)
}

pub fn lowpass(x: &[f64], fc: f64, fs: f64) -> Result<Vec<f64>, MetricsError> {
    lowpass_with(x, fc, fs, FilterMode::ZeroPhase)
}

/// Per-axis numerical derivative: central differences inside, one-sided at
/// the two ends.
pub fn differentiate(x: &[f64], fs: f64) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| match i {
            0 => (x[1] - x[0]) * fs,
            i if i == n - 1 => (x[n - 1] - x[n - 2]) * fs,
            i => (x[i + 1] - x[i - 1]) * fs / 2.0,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeedParams {
    pub cutoff_hz: f64,
    pub mode: FilterMode,
}

impl Default for SpeedParams {
    fn default() -> Self {
        Self {
            cutoff_hz: 20.0,
            mode: FilterMode::ZeroPhase,
        }
    }
}

/// Speed magnitude of a uniformly sampled 3D trajectory.
pub fn speed_profile(
    samples: &[Vector3<f64>],
    fs: f64,
    params: &SpeedParams,
) -> Result<Vec<f64>, MetricsError> {
    if samples.len() < 3 {
        return Err(MetricsError::TooShort {
            needed: 3,
            got: samples.len(),
        });
    }
    if let Some(i) = samples.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(MetricsError::NonFinite(i));
    }
    let mut axes = Vec::with_capacity(3);
    for a in 0..3 {
        let x: Vec<f64> = samples.iter().map(|p| p[a]).collect();
        axes.push(lowpass_with(&differentiate(&x, fs), params.cutoff_hz, fs, params.mode)?);
    }
    Ok((0..samples.len())
        .map(|i| (axes[0][i].powi(2) + axes[1][i].powi(2) + axes[2][i].powi(2)).sqrt())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparcParams {
    /// Upper bound of the adaptive cutoff, Hz.
    pub w_max: f64,
    /// Amplitude threshold on the normalised spectrum.
    pub v_bar: f64,
    /// Pad to the next power of two at least this multiple of the length.
    pub pad_factor: usize,
}

impl Default for SparcParams {
    fn default() -> Self {
        Self {
            w_max: 20.0,
            v_bar: 0.05,
            pad_factor: 4,
        }
    }
}

impl SparcParams {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.w_max > 0.0) {
            return Err(MetricsError::InvalidParams("w_max must be positive"));
        }
        if !(self.v_bar > 0.0 && self.v_bar < 1.0) {
            return Err(MetricsError::InvalidParams("v_bar must lie in (0, 1)"));
        }
        if self.pad_factor == 0 {
            return Err(MetricsError::InvalidParams("pad_factor must be at least 1"));
        }
        Ok(())
    }
}

/// Spectral arc length of a speed profile. More negative is less smooth.
pub fn sparc(speeds: &[f64], fs: f64, p: &SparcParams) -> Result<f64, MetricsError> {
    p.validate()?;
    if !(fs > 0.0) {
        return Err(MetricsError::BadRate(fs));
    }
    if speeds.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(i) = speeds.iter().position(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    let nfft = (speeds.len() * p.pad_factor).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = speeds.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(nfft, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);

    let df = fs / nfft as f64;
    let dc = buf[0].norm();
    if !(dc > 0.0) {
        return Err(MetricsError::ZeroSpeed);
    }
    // bins up to w_max
    let last_bin = ((p.w_max / df).floor() as usize).min(nfft / 2);
    let mag: Vec<f64> = buf[..=last_bin].iter().map(|c| c.norm() / dc).collect();
    let cut = mag.iter().rposition(|&m| m >= p.v_bar).unwrap_or(0);
    // (frequency, amplitude) polyline, closed at the interpolated crossing
    let mut curve: Vec<(f64, f64)> = mag[..=cut]
        .iter()
        .enumerate()
        .map(|(k, &m)| (k as f64 * df, m))
        .collect();
    if cut < last_bin && mag[cut] > p.v_bar {
        let frac = (mag[cut] - p.v_bar) / (mag[cut] - mag[cut + 1]);
        curve.push(((cut as f64 + frac) * df, p.v_bar));
    }
    let wc = curve.last().map(|c| c.0).unwrap_or(df);
    let len: f64 = curve
        .windows(2)
        .map(|w| (((w[1].0 - w[0].0) / wc).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
        .sum();
    Ok(-len)
}

/// Time from target display to confirmation, hold included. `None` for
/// trials that were never confirmed.
pub fn completion_time(trial: &TrialRecord) -> Option<f64> {
    trial
        .confirmed_at_us
        .map(|c| secs(c.saturating_sub(trial.shown_at_us)))
}

/// Type-7 sample quantile (linear interpolation between order statistics).
pub fn quantile_type7(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1); NaN for fewer than two values.
    pub sd: f64,
}

pub fn moments(values: &[f64]) -> Moments {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    Moments { n, mean, sd }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_type7(&v, 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub k: f64,
    pub q1: f64,
    pub q3: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
    pub n_before: usize,
    pub n_removed: usize,
    pub percent_removed: f64,
    pub before: Moments,
    pub after: Moments,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierSplit {
    pub kept: Vec<f64>,
    pub removed: Vec<f64>,
    pub report: OutlierReport,
}

/// Single-pass IQR screening with fences `Q1 − k·IQR` and `Q3 + k·IQR`.
/// Samples with fewer than four values are returned untouched.
pub fn remove_outliers(values: &[f64], k: f64) -> Result<OutlierSplit, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_type7(&sorted, 0.25);
    let q3 = quantile_type7(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - k * iqr, q3 + k * iqr);
    let (kept, removed): (Vec<f64>, Vec<f64>) = if values.len() < 4 {
        (values.to_vec(), Vec::new())
    } else {
        values.iter().partition(|&&v| v >= lo && v <= hi)
    };
    let report = OutlierReport {
        k,
        q1,
        q3,
        lower_fence: lo,
        upper_fence: hi,
        n_before: values.len(),
        n_removed: removed.len(),
        percent_removed: 100.0 * removed.len() as f64 / values.len() as f64,
        before: moments(values),
        after: moments(&kept),
    };
    Ok(OutlierSplit {
        kept,
        removed,
        report,
    })
}
