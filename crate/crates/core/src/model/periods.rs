use ndarray::{Array2, ArrayView2};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodEntry {
    pub period: usize,
    pub amplitude: f64,
    /// Frequency bin the period came from. `None` for the constant fallback.
    pub frequency: Option<usize>,
}

/// Dominant periods, amplitudes descending, periods distinct. May hold
/// fewer than `top_k` entries when the spectrum has fewer distinct periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSet(pub Vec<PeriodEntry>);

impl PeriodSet {
    pub fn periods(&self) -> Vec<usize> {
        self.0.iter().map(|e| e.period).collect()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.0.iter().map(|e| e.amplitude).collect()
    }

    pub fn is_fallback(&self) -> bool {
        self.0.len() == 1 && self.0[0].frequency.is_none()
    }
}

/// Channel-averaged DFT magnitude for bins `0..=L/2`.
pub fn amplitude_spectrum(x: ArrayView2<f64>) -> Vec<f64> {
    let (l, d) = x.dim();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(l);
    let mut spectrum = vec![0.0; l / 2 + 1];
    let mut buf = vec![Complex::new(0.0, 0.0); l];
    for c in 0..d {
        for (t, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(x[[t, c]], 0.0);
        }
        fft.process(&mut buf);
        for (f, s) in spectrum.iter_mut().enumerate() {
            *s += buf[f].norm();
        }
    }
    for s in &mut spectrum {
        *s /= d as f64;
    }
    spectrum
}

/// Top-`top_k` periods of `x` (L × channels). The zero-frequency bin is
/// ignored, so adding a constant leaves the result unchanged. Bins whose
/// period duplicates a stronger bin's are skipped. A spectrum with no
/// energy yields the single fallback entry `(L, 0)`.
pub fn detect_periods(x: ArrayView2<f64>, top_k: usize) -> Result<PeriodSet> {
    let (l, d) = x.dim();
    if l < 2 || d == 0 {
        return Err(Error::shape("detect_periods", "at least 2 timesteps and 1 channel", format!("{l} × {d}")));
    }
    let spectrum = amplitude_spectrum(x);
    let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * l as f64 * scale;

    let mut bins: Vec<usize> = (1..=l / 2).filter(|&f| spectrum[f] > tol).collect();
    // stable: equal amplitudes keep the lower frequency first
    bins.sort_by(|a, b| spectrum[*b].total_cmp(&spectrum[*a]));
    let mut out: Vec<PeriodEntry> = Vec::new();
    for f in bins {
        if out.len() == top_k {
            break;
        }
        let period = l.div_ceil(f);
        if out.iter().all(|e| e.period != period) {
            out.push(PeriodEntry {
                period,
                amplitude: spectrum[f],
                frequency: Some(f),
            });
        }
    }
    if out.is_empty() {
        out.push(PeriodEntry {
            period: l,
            amplitude: 0.0,
            frequency: None,
        });
    }
    Ok(PeriodSet(out))
}

/// d amplitude(f) / d x, same shape as `x`.
pub(crate) fn amplitude_gradient(x: ArrayView2<f64>, f: usize) -> Array2<f64> {
    let (l, d) = x.dim();
    let theta: Vec<f64> = (0..l)
        .map(|t| 2.0 * std::f64::consts::PI * (f * t % l) as f64 / l as f64)
        .collect();
    let (cos, sin): (Vec<f64>, Vec<f64>) = theta.iter().map(|t| (t.cos(), t.sin())).unzip();
    let mut g = Array2::zeros((l, d));
    for c in 0..d {
        let mut re = 0.0;
        let mut im = 0.0;
        for t in 0..l {
            re += x[[t, c]] * cos[t];
            im -= x[[t, c]] * sin[t];
        }
        let mag = (re * re + im * im).sqrt();
        if mag <= f64::MIN_POSITIVE {
            continue;
        }
        for t in 0..l {
            g[[t, c]] = (re * cos[t] - im * sin[t]) / (mag * d as f64);
        }
    }
    g
}
