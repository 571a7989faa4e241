//! Classical, cyclic and conjugate-cyclic array correlation matrices.
//!
//! For snapshot samples `z[k]` at `t = k / fs` the estimators are
//!
//! ```text
//! R        = 1/N sum_k z[k] z[k]^H
//! R^a      = 1/N sum_k z[k] z[k]^H exp(-j 2 pi a t)
//! Rconj^a  = 1/N sum_k z[k] z[k]^T exp(-j 2 pi a t)
//! ```
//!
//! All three share one accumulation kernel. Each term is formed as
//! `phasor * (z_i * conj(z_j))`, which makes `R^{-a}` the exact Hermitian
//! transpose of `R^a` and makes `R^0` bit-identical to `R`.
//!
//! A cyclic spectrum is the Frobenius norm of the cyclic matrix over a grid
//! of cyclic frequencies. Grids made only of DFT bins (`a * N / fs` integer)
//! are evaluated with one FFT per antenna pair instead of one pass over the
//! data per frequency.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::arraysim::ArraySnapshot;
use crate::siggen::unit_phasor;
use crate::{robust_threshold, CMatrix, CVector};

/// Detection threshold in normalised MADs above the median.
pub const DETECTION_MADS: f64 = 5.0;

/// Minimum spectrum length accepted by [`detect_cyclic_freqs`].
pub const MIN_DETECTION_POINTS: usize = 16;

/// Tolerance, in bins, for treating a cyclic frequency as a DFT bin.
const BIN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CycloError {
    #[error("cyclic frequency {alpha} Hz must satisfy |alpha| < sample rate {sample_rate} Hz")]
    AlphaOutOfRange { alpha: f64, sample_rate: f64 },
    #[error("cyclic frequency grid is empty")]
    EmptyGrid,
    #[error("cyclic frequency grid must be strictly increasing (index {0})")]
    UnsortedGrid(usize),
    #[error("spectrum has {0} points, detection needs at least {MIN_DETECTION_POINTS}")]
    SpectrumTooShort(usize),
    #[error("alpha grid and magnitudes differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Classical array correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix {
    pub values: CMatrix,
    pub n_samples: usize,
}

impl CorrMatrix {
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Largest `|R - R^H|` entry relative to the largest `|R|` entry.
    pub fn hermitian_error(&self) -> f64 {
        let scale = self.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return 0.0;
        }
        (&self.values - self.values.adjoint())
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
            / scale
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.values + self.values.adjoint()) * Complex64::new(0.5, 0.0);
        h.symmetric_eigenvalues().min()
    }

    pub fn trace(&self) -> f64 {
        self.values.diagonal().iter().map(|v| v.re).sum()
    }
}

/// Cyclic (or conjugate cyclic) correlation matrix at one cyclic frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicCorrMatrix {
    pub values: CMatrix,
    pub alpha: f64,
    pub conjugate: bool,
    pub n_samples: usize,
}

impl CyclicCorrMatrix {
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn frobenius(&self) -> f64 {
        self.values.norm()
    }

    /// Largest `|R - R^T|` entry; zero for conjugate matrices.
    pub fn symmetry_error(&self) -> f64 {
        (&self.values - self.values.transpose())
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut sv: Vec<f64> = self.values.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    }

    /// Unit-norm left singular vector of the largest singular value.
    pub fn principal_left_singular_vector(&self) -> CVector {
        let svd = self.values.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let imax = svd.singular_values.imax();
        u.column(imax).into_owned()
    }
}

/// Frobenius norm of the cyclic matrix over a grid of cyclic frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicSpectrum {
    pub alphas: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub conjugate: bool,
}

impl CyclicSpectrum {
    pub fn new(alphas: Vec<f64>, magnitudes: Vec<f64>, conjugate: bool) -> Result<Self, CycloError> {
        if alphas.len() != magnitudes.len() {
            return Err(CycloError::LengthMismatch(alphas.len(), magnitudes.len()));
        }
        check_grid(&alphas)?;
        Ok(CyclicSpectrum {
            alphas,
            magnitudes,
            conjugate,
        })
    }

    /// Index and value of the largest magnitude.
    pub fn argmax(&self) -> Option<(usize, f64)> {
        self.magnitudes
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
    }
}

/// A detected cyclic frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CyclicPeak {
    pub alpha: f64,
    pub magnitude: f64,
}

/// Evenly spaced grid of DFT-bin cyclic frequencies `bin * fs / n` for
/// `bin` in `first..=last`.
pub fn bin_grid(sample_rate: f64, n_samples: usize, first: i64, last: i64) -> Vec<f64> {
    let step = sample_rate / n_samples as f64;
    (first..=last).map(|b| b as f64 * step).collect()
}

/// Default grid for the non-conjugate spectrum: positive bins up to Nyquist.
pub fn default_cyclic_grid(sample_rate: f64, n_samples: usize) -> Vec<f64> {
    bin_grid(sample_rate, n_samples, 1, (n_samples / 2) as i64)
}

/// Default grid for the conjugate spectrum: every bin in `[-fs/2, fs/2)`.
pub fn default_conjugate_grid(sample_rate: f64, n_samples: usize) -> Vec<f64> {
    let half = (n_samples / 2) as i64;
    bin_grid(sample_rate, n_samples, -half, n_samples as i64 - half - 1)
}

fn check_grid(alphas: &[f64]) -> Result<(), CycloError> {
    if alphas.is_empty() {
        return Err(CycloError::EmptyGrid);
    }
    for (i, w) in alphas.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(CycloError::UnsortedGrid(i + 1));
        }
    }
    Ok(())
}

fn check_alpha(alpha: f64, sample_rate: f64) -> Result<(), CycloError> {
    if alpha.is_finite() && alpha.abs() < sample_rate {
        Ok(())
    } else {
        Err(CycloError::AlphaOutOfRange { alpha, sample_rate })
    }
}

/// `1/N sum_k exp(-j 2 pi alpha k / fs) (z_i[k] * conj?(z_j[k]))`, row-parallel.
fn accumulate(snap: &ArraySnapshot, alpha: f64, conjugate: bool) -> CMatrix {
    let m = snap.n_antennas();
    let n = snap.n_samples();
    let step = alpha / snap.sample_rate;
    let phasors: Vec<Complex64> = (0..n).map(|k| unit_phasor(-(step * k as f64))).collect();
    let data = &snap.data;

    let rows: Vec<Vec<Complex64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![Complex64::new(0.0, 0.0); m];
            for (k, p) in phasors.iter().enumerate() {
                let col = data.column(k);
                let zi = col[i];
                if conjugate {
                    for (acc, zj) in row.iter_mut().zip(col.iter()) {
                        *acc += p * (zi * zj);
                    }
                } else {
                    for (acc, zj) in row.iter_mut().zip(col.iter()) {
                        *acc += p * (zi * zj.conj());
                    }
                }
            }
            row
        })
        .collect();

    let scale = n as f64;
    CMatrix::from_fn(m, m, |i, j| rows[i][j] / scale)
}

/// Sample correlation matrix `1/N sum_k z z^H`.
pub fn corr_matrix(snap: &ArraySnapshot) -> CorrMatrix {
    CorrMatrix {
        values: accumulate(snap, 0.0, false),
        n_samples: snap.n_samples(),
    }
}

/// Cyclic correlation matrix at `alpha` Hz (transpose instead of Hermitian
/// transpose when `conjugate`).
pub fn cyclic_corr_matrix(snap: &ArraySnapshot, alpha: f64, conjugate: bool) -> Result<CyclicCorrMatrix, CycloError> {
    check_alpha(alpha, snap.sample_rate)?;
    Ok(CyclicCorrMatrix {
        values: accumulate(snap, alpha, conjugate),
        alpha,
        conjugate,
        n_samples: snap.n_samples(),
    })
}

/// DFT bin index of `alpha` if it sits on the bin grid of an `n`-point transform.
fn dft_bin(alpha: f64, sample_rate: f64, n: usize) -> Option<usize> {
    let x = alpha * n as f64 / sample_rate;
    let r = x.round();
    if (x - r).abs() > BIN_TOLERANCE {
        return None;
    }
    Some((r as i64).rem_euclid(n as i64) as usize)
}

/// Frobenius-norm cyclic spectrum over `alphas`.
pub fn cyclic_spectrum(snap: &ArraySnapshot, alphas: &[f64], conjugate: bool) -> Result<CyclicSpectrum, CycloError> {
    check_grid(alphas)?;
    for &a in alphas {
        check_alpha(a, snap.sample_rate)?;
    }
    let n = snap.n_samples();
    let bins: Option<Vec<usize>> = alphas.iter().map(|&a| dft_bin(a, snap.sample_rate, n)).collect();
    let magnitudes = match bins {
        Some(bins) => spectrum_fft(snap, &bins, conjugate),
        None => spectrum_direct(snap, alphas, conjugate)?,
    };
    Ok(CyclicSpectrum {
        alphas: alphas.to_vec(),
        magnitudes,
        conjugate,
    })
}

/// Evaluates every alpha with the time-domain estimator.
pub fn spectrum_direct(snap: &ArraySnapshot, alphas: &[f64], conjugate: bool) -> Result<Vec<f64>, CycloError> {
    alphas
        .iter()
        .map(|&a| cyclic_corr_matrix(snap, a, conjugate).map(|r| r.frobenius()))
        .collect()
}

fn spectrum_fft(snap: &ArraySnapshot, bins: &[usize], conjugate: bool) -> Vec<f64> {
    let m = snap.n_antennas();
    let n = snap.n_samples();
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n);
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
    let data = &snap.data;

    // Per-pair contributions to |R|_F^2 at each requested bin, reduced in pair order.
    let contributions: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let zi = data.row(i);
            let zj = data.row(j);
            let mut buf: Vec<Complex64> = zi
                .iter()
                .zip(zj.iter())
                .map(|(a, b)| if conjugate { a * b } else { a * b.conj() })
                .collect();
            fft.process(&mut buf);
            bins.iter()
                .map(|&b| {
                    let here = buf[b].norm_sqr();
                    if i == j {
                        here
                    } else if conjugate {
                        2.0 * here
                    } else {
                        here + buf[(n - b) % n].norm_sqr()
                    }
                })
                .collect()
        })
        .collect();

    let scale = n as f64;
    (0..bins.len())
        .map(|g| contributions.iter().map(|c| c[g]).sum::<f64>().sqrt() / scale)
        .collect()
}

/// Local maxima of the spectrum above `median + 5 MAD`, strongest first.
///
/// For the non-conjugate spectrum the `alpha = 0` point (total power) is
/// excluded from both the statistics and the candidates.
pub fn detect_cyclic_freqs(spec: &CyclicSpectrum) -> Result<Vec<CyclicPeak>, CycloError> {
    let len = spec.magnitudes.len();
    if spec.alphas.len() != len {
        return Err(CycloError::LengthMismatch(spec.alphas.len(), len));
    }
    if len < MIN_DETECTION_POINTS {
        return Err(CycloError::SpectrumTooShort(len));
    }
    let min_step = spec
        .alphas
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let excluded = |i: usize| !spec.conjugate && spec.alphas[i].abs() < 0.5 * min_step;

    let considered: Vec<f64> = (0..len).filter(|&i| !excluded(i)).map(|i| spec.magnitudes[i]).collect();
    let Some(threshold) = robust_threshold(&considered, DETECTION_MADS) else {
        return Ok(Vec::new());
    };

    let mags = &spec.magnitudes;
    let mut peaks: Vec<CyclicPeak> = (0..len)
        .filter(|&i| !excluded(i) && mags[i] > threshold)
        .filter(|&i| {
            let left_ok = i == 0 || excluded(i - 1) || mags[i] > mags[i - 1];
            let right_ok = i + 1 == len || excluded(i + 1) || mags[i] >= mags[i + 1];
            left_ok && right_ok
        })
        .map(|i| CyclicPeak {
            alpha: spec.alphas[i],
            magnitude: mags[i],
        })
        .collect();
    peaks.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude));
    Ok(peaks)
}
