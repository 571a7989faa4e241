//! Deterministic signal generators for scene synthesis.
//!
//! Every generator is a pure function of its parameters and an explicit
//! `u64` seed. Scenes derive one seed per source from the global scene seed
//! with [`derive_seed`], so a scene is reproducible regardless of the order
//! in which its sources are evaluated.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arraysim::TrajectorySpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("sample count must be at least 1")]
    EmptySeries,
    #[error("sample rate must be positive and finite, got {0}")]
    BadSampleRate(f64),
    #[error("power must be non-negative and finite, got {0}")]
    BadPower(f64),
    #[error("baud rate {baud} Hz must lie in (0, sample_rate/2 = {nyquist}) Hz")]
    BadBaudRate { baud: f64, nyquist: f64 },
    #[error("frequency {freq} Hz aliases: |f| must be below sample_rate/2 = {nyquist} Hz")]
    Aliasing { freq: f64, nyquist: f64 },
    #[error("BPSK source requires a baud rate")]
    MissingBaudRate,
}

/// Uniformly sampled complex baseband samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSeries {
    samples: Vec<Complex64>,
    sample_rate: f64,
}

impl ComplexSeries {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Result<Self, SignalError> {
        if samples.is_empty() {
            return Err(SignalError::EmptySeries);
        }
        check_sample_rate(sample_rate)?;
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false; a series holds at least one sample.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean instantaneous power `<|s|^2>`.
    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }
}

/// Source waveform family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// Stationary circular complex Gaussian noise (astronomical source).
    AstroNoise,
    /// Rectangular-pulse BPSK on a carrier offset.
    Bpsk,
    /// Continuous-wave tone at the carrier offset.
    CwTone,
}

impl SourceKind {
    pub fn is_cyclostationary(self) -> bool {
        !matches!(self, SourceKind::AstroNoise)
    }
}

/// One emitter in a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub kind: SourceKind,
    /// Power in dB relative to the 0 dB per-antenna system-noise reference (1.0).
    pub snr_db: f64,
    pub trajectory: TrajectorySpec,
    /// BPSK symbol rate in Hz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baud_rate_hz: Option<f64>,
    /// Carrier offset from the band centre (BPSK and CW tone).
    #[serde(default)]
    pub carrier_offset_hz: f64,
    /// Explicit waveform seed; when absent the scene seed is split by source index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SourceSpec {
    /// Linear power relative to the unit system-noise reference.
    pub fn power(&self) -> f64 {
        db_to_linear(self.snr_db)
    }

    /// Checks the kind-specific parameter constraints at `sample_rate`.
    pub fn validate(&self, sample_rate: f64) -> Result<(), SignalError> {
        check_sample_rate(sample_rate)?;
        check_power(self.power())?;
        let nyquist = sample_rate / 2.0;
        match self.kind {
            SourceKind::AstroNoise => Ok(()),
            SourceKind::Bpsk => {
                let baud = self.baud_rate_hz.ok_or(SignalError::MissingBaudRate)?;
                check_baud(baud, sample_rate)?;
                check_alias(self.carrier_offset_hz, nyquist)
            }
            SourceKind::CwTone => check_alias(self.carrier_offset_hz, nyquist),
        }
    }

    /// Generates `n` samples of this source's waveform from `seed`.
    pub fn waveform(&self, n: usize, sample_rate: f64, seed: u64) -> Result<ComplexSeries, SignalError> {
        self.validate(sample_rate)?;
        let power = self.power();
        match self.kind {
            SourceKind::AstroNoise => {
                let mut series = gen_noise(n, power, seed)?;
                series.sample_rate = sample_rate;
                Ok(series)
            }
            SourceKind::Bpsk => gen_bpsk(
                n,
                self.baud_rate_hz.ok_or(SignalError::MissingBaudRate)?,
                self.carrier_offset_hz,
                sample_rate,
                power,
                seed,
            ),
            SourceKind::CwTone => {
                let phase = rng_from_seed(seed).random_range(0.0..2.0 * PI);
                gen_cw(n, self.carrier_offset_hz, sample_rate, power, phase)
            }
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// SplitMix64 finaliser, used to derive independent child seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of child stream `index` from a parent seed.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `exp(j*2*pi*cycles)` with the argument reduced to `[-0.5, 0.5]` cycles first.
///
/// The result is exactly conjugated when `cycles` is negated.
pub fn unit_phasor(cycles: f64) -> Complex64 {
    let frac = cycles - cycles.round();
    let theta = 2.0 * PI * frac.abs();
    let (s, c) = theta.sin_cos();
    Complex64::new(c, if frac < 0.0 { -s } else { s })
}

fn check_sample_rate(fs: f64) -> Result<(), SignalError> {
    if fs.is_finite() && fs > 0.0 {
        Ok(())
    } else {
        Err(SignalError::BadSampleRate(fs))
    }
}

fn check_power(power: f64) -> Result<(), SignalError> {
    if power.is_finite() && power >= 0.0 {
        Ok(())
    } else {
        Err(SignalError::BadPower(power))
    }
}

fn check_baud(baud: f64, fs: f64) -> Result<(), SignalError> {
    if baud.is_finite() && baud > 0.0 && baud < fs / 2.0 {
        Ok(())
    } else {
        Err(SignalError::BadBaudRate {
            baud,
            nyquist: fs / 2.0,
        })
    }
}

fn check_alias(freq: f64, nyquist: f64) -> Result<(), SignalError> {
    if freq.is_finite() && freq.abs() < nyquist {
        Ok(())
    } else {
        Err(SignalError::Aliasing { freq, nyquist })
    }
}

/// I.i.d. circular complex Gaussian samples of mean power `power`.
///
/// The returned series carries a nominal sample rate of 1 Hz; scene code
/// replaces it with the scene rate.
pub fn gen_noise(n: usize, power: f64, seed: u64) -> Result<ComplexSeries, SignalError> {
    if n == 0 {
        return Err(SignalError::EmptySeries);
    }
    check_power(power)?;
    let sigma = (power / 2.0).sqrt();
    let mut rng = rng_from_seed(seed);
    let samples = (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(sigma * re, sigma * im)
        })
        .collect();
    ComplexSeries::new(samples, 1.0)
}

/// Rectangular-pulse BPSK: equiprobable +/-1 symbols held between the sample
/// boundaries `round(j * sample_rate / baud_rate)`, on `exp(j*2*pi*carrier_offset*t)`.
pub fn gen_bpsk(
    n: usize,
    baud_rate: f64,
    carrier_offset: f64,
    sample_rate: f64,
    power: f64,
    seed: u64,
) -> Result<ComplexSeries, SignalError> {
    if n == 0 {
        return Err(SignalError::EmptySeries);
    }
    check_sample_rate(sample_rate)?;
    check_power(power)?;
    check_baud(baud_rate, sample_rate)?;
    check_alias(carrier_offset, sample_rate / 2.0)?;

    let amplitude = power.sqrt();
    let samples_per_symbol = sample_rate / baud_rate;
    let step = carrier_offset / sample_rate;
    let mut rng = rng_from_seed(seed);

    let mut samples = Vec::with_capacity(n);
    let mut symbol_index = 0u64;
    let mut symbol = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut next_boundary = ((symbol_index + 1) as f64 * samples_per_symbol).round() as usize;
    for k in 0..n {
        while k >= next_boundary {
            symbol_index += 1;
            symbol = if rng.random::<bool>() { 1.0 } else { -1.0 };
            next_boundary = ((symbol_index + 1) as f64 * samples_per_symbol).round() as usize;
        }
        samples.push(unit_phasor(step * k as f64) * (amplitude * symbol));
    }
    ComplexSeries::new(samples, sample_rate)
}

/// `s[k] = sqrt(power) * exp(j*(2*pi*freq*k/sample_rate + phase))`.
pub fn gen_cw(n: usize, freq: f64, sample_rate: f64, power: f64, phase: f64) -> Result<ComplexSeries, SignalError> {
    if n == 0 {
        return Err(SignalError::EmptySeries);
    }
    check_sample_rate(sample_rate)?;
    check_power(power)?;
    check_alias(freq, sample_rate / 2.0)?;
    let amplitude = power.sqrt();
    let step = freq / sample_rate;
    let offset = phase / (2.0 * PI);
    let samples = (0..n)
        .map(|k| unit_phasor(step * k as f64 + offset) * amplitude)
        .collect();
    ComplexSeries::new(samples, sample_rate)
}
