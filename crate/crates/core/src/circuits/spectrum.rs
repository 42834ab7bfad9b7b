//! Generator eigenvalues, spectral gaps and empirical Fourier spectra.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::feature_map::EncodingBlock;
use crate::error::{Error, Result};

/// Tolerance used to merge gaps of exactly representable generators.
pub const DEFAULT_GAP_TOL: f64 = 1e-9;

/// Eigenvalues of `Σ_m w_m σ_m / 2` for a product block, duplicates kept,
/// sorted ascending. All terms commute, so every sign pattern of
/// `± w_m / 2` is an eigenvalue.
pub fn composite_eigenvalues(block: &EncodingBlock, theta_f: &[f64]) -> Result<Vec<f64>> {
    let half: Vec<f64> = block.weights(theta_f)?.into_iter().map(|w| 0.5 * w).collect();
    let mut eigs: Vec<f64> = (0..1usize << half.len())
        .map(|pattern| {
            half.iter()
                .enumerate()
                .map(|(m, h)| if pattern >> m & 1 == 1 { -h } else { *h })
                .sum()
        })
        .collect();
    eigs.sort_by(f64::total_cmp);
    Ok(eigs)
}

/// Sorted unique positive pairwise differences, merging values closer than `dedup_tol`.
pub fn spectral_gaps(eigenvalues: &[f64], dedup_tol: f64) -> Vec<f64> {
    let mut diffs = Vec::with_capacity(eigenvalues.len() * eigenvalues.len() / 2);
    for (i, a) in eigenvalues.iter().enumerate() {
        for b in &eigenvalues[i + 1..] {
            let d = (b - a).abs();
            if d > dedup_tol {
                diffs.push(d);
            }
        }
    }
    diffs.sort_by(f64::total_cmp);
    let mut gaps: Vec<f64> = Vec::new();
    for d in diffs {
        match gaps.last() {
            Some(&last) if d - last <= dedup_tol => {}
            _ => gaps.push(d),
        }
    }
    gaps
}

fn unique_sorted(values: &[f64], tol: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &v in values {
        match out.last() {
            Some(&last) if v - last <= tol => {}
            _ => out.push(v),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumMode {
    /// Expectation-value models: frequencies are the eigenvalue gaps.
    QnnGaps,
    /// Fidelity kernels: frequencies are the eigenvalues themselves.
    KernelEigenvalues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    pub gaps: Vec<f64>,
    pub mode: SpectrumMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dft: Option<Vec<(f64, f64)>>,
}

impl SpectrumReport {
    pub fn from_block(
        block: &EncodingBlock,
        theta_f: &[f64],
        mode: SpectrumMode,
        dedup_tol: f64,
    ) -> Result<Self> {
        let eigenvalues = composite_eigenvalues(block, theta_f)?;
        let gaps = spectral_gaps(&eigenvalues, dedup_tol);
        Ok(Self {
            eigenvalues,
            gaps,
            mode,
            dft: None,
        })
    }

    /// The model frequency set `Ω` under the report's mode.
    pub fn frequencies(&self) -> Vec<f64> {
        match self.mode {
            SpectrumMode::QnnGaps => self.gaps.clone(),
            SpectrumMode::KernelEigenvalues => unique_sorted(&self.eigenvalues, DEFAULT_GAP_TOL),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Rectangular,
    Hann,
}

/// One-sided DFT magnitude spectrum on an angular-frequency axis.
///
/// See [`dft_spectrum_windowed`]; this is the rectangular-window variant.
pub fn dft_spectrum(xs: &[f64], ys: &[f64]) -> Result<Vec<(f64, f64)>> {
    dft_spectrum_windowed(xs, ys, Window::Rectangular)
}

/// One-sided DFT magnitude spectrum of uniformly sampled data.
///
/// Bin `k` sits at `ω_k = 2π k / (n Δx)`. Magnitudes are scaled by the
/// coherent gain of the window so that a unit-amplitude cosine on a bin
/// centre reads 1 and a constant offset `c` reads `c` at `ω = 0`.
pub fn dft_spectrum_windowed(xs: &[f64], ys: &[f64], window: Window) -> Result<Vec<(f64, f64)>> {
    if xs.len() != ys.len() {
        return Err(Error::Input(format!(
            "{} sample positions for {} values",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::Input("need at least two samples".into()));
    }
    let dx = (xs[n - 1] - xs[0]) / (n - 1) as f64;
    if !(dx > 0.0) {
        return Err(Error::Input("sample positions must increase".into()));
    }
    for (i, pair) in xs.windows(2).enumerate() {
        if ((pair[1] - pair[0]) - dx).abs() > 1e-6 * dx {
            return Err(Error::Input(format!(
                "non-uniform grid: spacing {} at index {i}, expected {dx}",
                pair[1] - pair[0]
            )));
        }
    }
    let weights: Vec<f64> = match window {
        Window::Rectangular => vec![1.0; n],
        Window::Hann => (0..n)
            .map(|i| {
                let s = (std::f64::consts::PI * i as f64 / (n - 1) as f64).sin();
                s * s
            })
            .collect(),
    };
    let gain: f64 = weights.iter().sum();
    let mut buf: Vec<Complex<f64>> = ys
        .iter()
        .zip(&weights)
        .map(|(y, w)| Complex::new(y * w, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let period = n as f64 * dx;
    Ok((0..=n / 2)
        .map(|k| {
            let one_sided = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
            let omega = 2.0 * std::f64::consts::PI * k as f64 / period;
            (omega, one_sided * buf[k].norm() / gain)
        })
        .collect())
}

/// Local maxima of a magnitude spectrum above `rel_threshold · max`.
pub fn find_peaks(spectrum: &[(f64, f64)], rel_threshold: f64) -> Vec<(f64, f64)> {
    let max = spectrum.iter().map(|p| p.1).fold(0.0, f64::max);
    let floor = rel_threshold * max;
    let n = spectrum.len();
    (0..n)
        .filter(|&i| {
            let m = spectrum[i].1;
            m > floor
                && (i == 0 || m >= spectrum[i - 1].1)
                && (i + 1 == n || m > spectrum[i + 1].1)
        })
        .map(|i| spectrum[i])
        .collect()
}

/// `n` equally spaced points over `[lo, hi]`, both endpoints included.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}
