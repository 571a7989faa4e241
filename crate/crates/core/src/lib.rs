//! Cyclostationary RFI monitoring for simulated phased-array radio telescopes.
//!
//! The crate is organised as a processing chain:
//!
//! - [`siggen`]: deterministic waveform generators (astronomical noise, BPSK, CW tones)
//! - [`arraysim`]: array geometry, steering vectors and narrowband scene synthesis
//! - [`cyclospec`]: classical, cyclic and conjugate-cyclic correlation matrices,
//!   cyclic spectra and cyclic-frequency detection
//! - [`imaging`]: beamformed classical and cyclic skymaps, peak localisation
//! - [`tracker`]: multi-frame RFI tracks, motion classification and prediction
//! - [`sched`]: RFI-aware observation scheduling and time-frequency flag masks
//! - [`scenario`]: scenario files and the end-to-end pipeline driven by the CLI
//! - [`formats`]: CSV / JSON / PGM readers and writers for every artifact

pub mod arraysim;
pub mod cyclospec;
pub mod formats;
pub mod imaging;
pub mod scenario;
pub mod sched;
pub mod siggen;
pub mod tracker;

pub use num_complex::Complex64;

/// Dense complex matrix used for snapshots and correlation matrices.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
/// Dense complex column vector (steering vectors, singular vectors).
pub type CVector = nalgebra::DVector<Complex64>;

/// Median of a slice (average of the two central values for even lengths).
///
/// Returns `None` for an empty slice. NaNs sort last.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Scale factor turning a raw median absolute deviation into a consistent
/// estimate of the standard deviation for Gaussian data.
pub const MAD_TO_SIGMA: f64 = 1.482_602_218_505_602;

/// Robust detection threshold `median + k * MAD`, where MAD is the
/// normalised median absolute deviation (`1.4826 * median(|x - median|)`).
pub fn robust_threshold(values: &[f64], k: f64) -> Option<f64> {
    let med = median(values)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&dev)? * MAD_TO_SIGMA;
    Some(med + k * mad)
}
