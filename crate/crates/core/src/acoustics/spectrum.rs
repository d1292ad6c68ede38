use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Periodic Hann taper of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos())).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taper {
    Hann,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowInfo {
    pub length: usize,
    pub hop: usize,
    pub dt: f64,
    pub taper: Taper,
}

/// Per-axis transforms of a tapered vector signal.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub window: WindowInfo,
    axes: [Vec<Complex64>; 3],
    tapered: [Vec<f64>; 3],
}

impl Spectrum {
    pub fn bin_count(&self) -> usize {
        self.window.length / 2 + 1
    }

    pub fn omega(&self, bin: usize) -> f64 {
        2.0 * PI * bin as f64 / (self.window.length as f64 * self.window.dt)
    }

    /// `|F̂_k|` as the Euclidean norm across axes, bins `0..=W/2`.
    pub fn magnitudes(&self) -> Vec<f64> {
        (0..self.bin_count())
            .map(|k| self.axes.iter().map(|a| a[k].norm_sqr()).sum::<f64>().sqrt())
            .collect()
    }

    pub fn axis(&self, axis: usize) -> &[Complex64] {
        &self.axes[axis]
    }

    /// Phase of the dominant axis at `bin`.
    pub fn phase(&self, bin: usize) -> f64 {
        let best = (0..3)
            .max_by(|&a, &b| self.axes[a][bin].norm_sqr().total_cmp(&self.axes[b][bin].norm_sqr()))
            .unwrap_or(0);
        self.axes[best][bin].arg()
    }

    pub fn time_energy(&self) -> f64 {
        self.tapered.iter().flatten().map(|v| v * v).sum()
    }

    /// `(1/W) Σ_k |X_k|²` over all bins and axes.
    pub fn spectral_energy(&self) -> f64 {
        let sum: f64 = self.axes.iter().flatten().map(|c| c.norm_sqr()).sum();
        sum / self.window.length as f64
    }
}

/// Transforms the `length` most recent vector samples of `signal`.
pub fn sliding_spectrum(signal: &[Vec3], length: usize, hop: usize, dt: f64) -> Result<Spectrum> {
    if length < 4 {
        return Err(Error::InvalidArgument(format!("window length must be at least 4, got {length}")));
    }
    if signal.len() < length {
        return Err(Error::NotReady("spectral window not full"));
    }
    let window = &signal[signal.len() - length..];
    let taper = hann_window(length);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(length);
    let mut tapered: [Vec<f64>; 3] = Default::default();
    let mut axes: [Vec<Complex64>; 3] = Default::default();
    for a in 0..3 {
        tapered[a] = window.iter().zip(&taper).map(|(v, w)| v[a] * w).collect();
        let mut buf: Vec<Complex64> = tapered[a].iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.process(&mut buf);
        axes[a] = buf;
    }
    Ok(Spectrum {
        window: WindowInfo {
            length,
            hop,
            dt,
            taper: Taper::Hann,
        },
        axes,
        tapered,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralPeak {
    pub bin: usize,
    pub omega: f64,
    pub magnitude: f64,
    pub phase: f64,
    pub weight: f64,
}

impl SpectralPeak {
    pub fn freq_hz(&self) -> f64 {
        self.omega / (2.0 * PI)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectralPeakSet {
    /// Sorted by magnitude, descending.
    pub peaks: Vec<SpectralPeak>,
    pub window: Option<WindowInfo>,
}

impl SpectralPeakSet {
    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.peaks.len()
    }
}

/// Strict local maxima above `min_prominence` of the global maximum; DC and
/// Nyquist bins are never peaks.
pub fn detect_peaks(spectrum: &Spectrum, max_peaks: usize, min_prominence: f64) -> SpectralPeakSet {
    let mags = spectrum.magnitudes();
    let global = mags.iter().copied().fold(0.0, f64::max);
    let mut peaks: Vec<SpectralPeak> = Vec::new();
    if global > 0.0 {
        for k in 1..mags.len().saturating_sub(1) {
            let m = mags[k];
            if m > mags[k - 1] && m > mags[k + 1] && m >= min_prominence * global {
                peaks.push(SpectralPeak {
                    bin: k,
                    omega: spectrum.omega(k),
                    magnitude: m,
                    phase: spectrum.phase(k),
                    weight: 0.0,
                });
            }
        }
    }
    peaks.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude).then(a.bin.cmp(&b.bin)));
    peaks.truncate(max_peaks);
    let total: f64 = peaks.iter().map(|p| p.magnitude).sum();
    for p in &mut peaks {
        p.weight = p.magnitude / total;
    }
    SpectralPeakSet {
        peaks,
        window: Some(spectrum.window),
    }
}
