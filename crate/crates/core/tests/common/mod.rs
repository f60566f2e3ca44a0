//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

/// First-order Butterworth coefficients derived from the analog prototype
/// `H(s) = wa / (s + wa)` with `s = 2 fs (z - 1) / (z + 1)` and a prewarped
/// analog cutoff `wa = 2 fs tan(pi fc / fs)`.
pub fn bilinear_oracle(fc: f64, fs: f64) -> (f64, f64, f64) {
    let wa = 2.0 * fs * (PI * fc / fs).tan();
    let den = wa + 2.0 * fs;
    (wa / den, wa / den, (wa - 2.0 * fs) / den)
}

/// Squared magnitude of `(b0 + b1 z^-1) / (1 + a1 z^-1)` at frequency `f`,
/// i.e. the gain of a forward-backward pass.
pub fn zero_phase_gain(b0: f64, b1: f64, a1: f64, f: f64, fs: f64) -> f64 {
    let w = 2.0 * PI * f / fs;
    let (c, s) = (w.cos(), w.sin());
    let num = (b0 + b1 * c).powi(2) + (b1 * s).powi(2);
    let den = (1.0 + a1 * c).powi(2) + (a1 * s).powi(2);
    num / den
}

/// Analytic min-jerk speed for a reach of `dist` over `dur`.
pub fn min_jerk_speed(dist: f64, dur: f64, t: f64) -> f64 {
    let s = (t / dur).clamp(0.0, 1.0);
    dist / dur * 30.0 * s * s * (1.0 - s).powi(2)
}

/// `count` identical reaches separated by `pause` seconds of rest.
pub fn submovements(count: usize, dur: f64, pause: f64, fs: f64) -> Vec<f64> {
    let period = dur + pause;
    let total = count as f64 * period - pause;
    let n = (total * fs).round() as usize + 1;
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let k = ((t / period).floor() as usize).min(count - 1);
            min_jerk_speed(0.3, dur, t - k as f64 * period)
        })
        .collect()
}

/// SPARC by direct DFT on a 16x zero-padded frequency grid, with the arc
/// length integrated by the trapezoid rule on a central-difference slope.
pub fn sparc_oracle(speeds: &[f64], fs: f64, w_max: f64, v_bar: f64) -> f64 {
    let n = speeds.len();
    let df = fs / (16 * n) as f64;
    let bins = (w_max / df).floor() as usize;
    let spectrum: Vec<f64> = (0..=bins)
        .map(|k| {
            let f = k as f64 * df;
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in speeds.iter().enumerate() {
                let ph = -2.0 * PI * f * j as f64 / fs;
                re += v * ph.cos();
                im += v * ph.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect();
    let norm: Vec<f64> = spectrum.iter().map(|v| v / spectrum[0]).collect();
    let cut = norm.iter().rposition(|&v| v >= v_bar).unwrap_or(0);
    let wc = cut as f64 * df;
    let slope = |k: usize| -> f64 {
        if k == 0 {
            (norm[1] - norm[0]) / df
        } else if k == cut {
            (norm[k] - norm[k - 1]) / df
        } else {
            (norm[k + 1] - norm[k - 1]) / (2.0 * df)
        }
    };
    let integrand: Vec<f64> = (0..=cut)
        .map(|k| ((1.0 / wc).powi(2) + slope(k).powi(2)).sqrt())
        .collect();
    -integrand.windows(2).map(|w| 0.5 * (w[0] + w[1]) * df).sum::<f64>()
}

/// Type-7 quartiles computed from the textbook definition
/// `Q(p) = x[floor(h)] + (h - floor(h)) (x[floor(h)+1] - x[floor(h)])`,
/// `h = (n - 1) p`, written out separately from the library.
pub fn quartiles_oracle(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| {
        let h = (v.len() - 1) as f64 * p;
        let j = h as usize;
        let g = h - j as f64;
        if j + 1 < v.len() {
            (1.0 - g) * v[j] + g * v[j + 1]
        } else {
            v[j]
        }
    };
    (q(0.25), q(0.75))
}
