//! Array geometry, steering vectors and narrowband scene synthesis.
//!
//! Directions are direction cosines `(l, m)` on the plane of the array
//! (x = east, y = north). Geometry enters the data only as a phase at the
//! reference frequency: the array is instantaneous and narrowband.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::siggen::{self, derive_seed, SignalError, SourceSpec};
use crate::{CMatrix, CVector};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Moving sources keep a constant direction within blocks of this many samples.
pub const MOTION_BLOCK: usize = 256;

/// Tolerance on `l^2 + m^2 <= 1` for rounding at the horizon.
const HORIZON_EPS: f64 = 1e-12;

/// Child-seed index reserved for system noise.
const NOISE_STREAM: u64 = u64::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("array needs at least 2 antennas, got {0}")]
    TooFewAntennas(usize),
    #[error("antennas {0} and {1} share the same position")]
    DuplicatePosition(usize, usize),
    #[error("antenna position {0} is not finite")]
    BadPosition(usize),
    #[error("reference frequency must be positive, got {0}")]
    BadReferenceFreq(f64),
    #[error("direction ({l}, {m}) lies outside the unit disk")]
    BelowHorizon { l: f64, m: f64 },
    #[error("scene must contain at least one sample")]
    NoSamples,
    #[error("system noise power must be non-negative, got {0}")]
    BadNoisePower(f64),
    #[error("source {source_index} leaves the visible hemisphere at t = {time} s")]
    TrajectoryLeavesSky { source_index: usize, time: f64 },
    #[error("source {source_index}: {error}")]
    Source { source_index: usize, error: SignalError },
    #[error("sample rate must be positive, got {0}")]
    BadSampleRate(f64),
}

/// A sky direction in direction cosines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDirection")]
pub struct DirectionLM {
    pub l: f64,
    pub m: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDirection {
    l: f64,
    m: f64,
}

impl TryFrom<RawDirection> for DirectionLM {
    type Error = SceneError;

    fn try_from(raw: RawDirection) -> Result<Self, Self::Error> {
        DirectionLM::new(raw.l, raw.m)
    }
}

impl DirectionLM {
    pub const ZENITH: DirectionLM = DirectionLM { l: 0.0, m: 0.0 };

    pub fn new(l: f64, m: f64) -> Result<Self, SceneError> {
        let dir = DirectionLM { l, m };
        if dir.is_visible() {
            Ok(dir)
        } else {
            Err(SceneError::BelowHorizon { l, m })
        }
    }

    /// True for finite directions with `l^2 + m^2 <= 1`.
    pub fn is_visible(&self) -> bool {
        self.l.is_finite() && self.m.is_finite() && self.radius_sq() <= 1.0 + HORIZON_EPS
    }

    pub fn radius_sq(&self) -> f64 {
        self.l * self.l + self.m * self.m
    }

    /// Euclidean separation in the `(l, m)` plane.
    pub fn distance(&self, other: &DirectionLM) -> f64 {
        (self.l - other.l).hypot(self.m - other.m)
    }
}

impl std::ops::Neg for DirectionLM {
    type Output = DirectionLM;

    fn neg(self) -> DirectionLM {
        DirectionLM { l: -self.l, m: -self.m }
    }
}

/// Source motion on the sky, in absolute scene time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    Fixed {
        start: DirectionLM,
    },
    /// `start + rate * t`, rate in direction cosines per second.
    LinearLm {
        start: DirectionLM,
        rate: [f64; 2],
    },
}

impl TrajectorySpec {
    pub fn fixed(dir: DirectionLM) -> Self {
        TrajectorySpec::Fixed { start: dir }
    }

    /// Position at time `t`; may fall outside the unit disk.
    pub fn position(&self, t: f64) -> DirectionLM {
        match *self {
            TrajectorySpec::Fixed { start } => start,
            TrajectorySpec::LinearLm { start, rate } => DirectionLM {
                l: start.l + rate[0] * t,
                m: start.m + rate[1] * t,
            },
        }
    }

    /// First time in `[t_start, t_end]` at which the trajectory is outside
    /// the visible hemisphere, if any.
    pub fn exit_time(&self, t_start: f64, t_end: f64) -> Option<f64> {
        if !self.position(t_start).is_visible() {
            return Some(t_start);
        }
        match *self {
            TrajectorySpec::Fixed { .. } => None,
            TrajectorySpec::LinearLm { start, rate } => {
                if self.position(t_end).is_visible() {
                    // The disk is convex, so the whole segment is inside.
                    return None;
                }
                // |start + rate t|^2 = 1, take the root past t_start.
                let a = rate[0] * rate[0] + rate[1] * rate[1];
                let b = 2.0 * (start.l * rate[0] + start.m * rate[1]);
                let c = start.radius_sq() - 1.0;
                let disc = (b * b - 4.0 * a * c).max(0.0);
                let root = (-b + disc.sqrt()) / (2.0 * a);
                Some(root.clamp(t_start, t_end))
            }
        }
    }
}

/// Antenna positions (metres, x east / y north) and the reference frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayGeometry {
    positions: Vec<[f64; 2]>,
    reference_freq_hz: f64,
}

impl ArrayGeometry {
    pub fn new(positions: Vec<[f64; 2]>, reference_freq_hz: f64) -> Result<Self, SceneError> {
        let geom = ArrayGeometry {
            positions,
            reference_freq_hz,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.positions.len() < 2 {
            return Err(SceneError::TooFewAntennas(self.positions.len()));
        }
        if !(self.reference_freq_hz.is_finite() && self.reference_freq_hz > 0.0) {
            return Err(SceneError::BadReferenceFreq(self.reference_freq_hz));
        }
        for (i, p) in self.positions.iter().enumerate() {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(SceneError::BadPosition(i));
            }
            for (j, q) in self.positions.iter().enumerate().skip(i + 1) {
                if p == q {
                    return Err(SceneError::DuplicatePosition(i, j));
                }
            }
        }
        Ok(())
    }

    /// Pseudo-random layout, uniform over a disk `aperture_wavelengths` across.
    pub fn random_disk(
        n_antennas: usize,
        reference_freq_hz: f64,
        aperture_wavelengths: f64,
        seed: u64,
    ) -> Result<Self, SceneError> {
        use rand::Rng;
        if !(reference_freq_hz.is_finite() && reference_freq_hz > 0.0) {
            return Err(SceneError::BadReferenceFreq(reference_freq_hz));
        }
        let radius = 0.5 * aperture_wavelengths * SPEED_OF_LIGHT / reference_freq_hz;
        let mut rng = siggen::rng_from_seed(seed);
        let positions = (0..n_antennas)
            .map(|_| {
                let r = radius * rng.random::<f64>().sqrt();
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                [r * theta.cos(), r * theta.sin()]
            })
            .collect();
        ArrayGeometry::new(positions, reference_freq_hz)
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn reference_freq(&self) -> f64 {
        self.reference_freq_hz
    }

    pub fn n_antennas(&self) -> usize {
        self.positions.len()
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.reference_freq_hz
    }
}

/// Phase compensation vector `exp(-j 2 pi (f0/c) (x l + y m))` for one direction.
pub fn steering_vector(geom: &ArrayGeometry, dir: DirectionLM) -> CVector {
    let k = geom.reference_freq_hz / SPEED_OF_LIGHT;
    CVector::from_iterator(
        geom.n_antennas(),
        geom.positions
            .iter()
            .map(|p| siggen::unit_phasor(-(k * (p[0] * dir.l + p[1] * dir.m)))),
    )
}

/// Everything needed to synthesize one array snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub geometry: ArrayGeometry,
    pub sources: Vec<SourceSpec>,
    pub n_samples: usize,
    pub sample_rate: f64,
    /// Per-antenna system noise power; zero synthesizes a noise-free scene.
    pub system_noise_power: f64,
    pub seed: u64,
    /// Time of the first sample in seconds.
    pub t0: f64,
}

impl Scene {
    pub fn duration(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate
    }

    /// Waveform seed of source `index`.
    pub fn source_seed(&self, index: usize) -> u64 {
        self.sources[index]
            .seed
            .unwrap_or_else(|| derive_seed(self.seed, index as u64))
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        self.geometry.validate()?;
        if self.n_samples == 0 {
            return Err(SceneError::NoSamples);
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(SceneError::BadSampleRate(self.sample_rate));
        }
        if !(self.system_noise_power.is_finite() && self.system_noise_power >= 0.0) {
            return Err(SceneError::BadNoisePower(self.system_noise_power));
        }
        let t_end = self.t0 + self.duration();
        for (i, source) in self.sources.iter().enumerate() {
            source
                .validate(self.sample_rate)
                .map_err(|error| SceneError::Source { source_index: i, error })?;
            if let Some(time) = source.trajectory.exit_time(self.t0, t_end) {
                return Err(SceneError::TrajectoryLeavesSky { source_index: i, time });
            }
        }
        Ok(())
    }
}

/// M x N antenna voltages; column `k` is the array vector at sample `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArraySnapshot {
    pub data: CMatrix,
    pub sample_rate: f64,
    pub t0: f64,
}

impl ArraySnapshot {
    pub fn n_antennas(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    /// Returns a copy with every sample multiplied by `c`.
    pub fn scaled(&self, c: Complex64) -> ArraySnapshot {
        ArraySnapshot {
            data: self.data.map(|z| z * c),
            sample_rate: self.sample_rate,
            t0: self.t0,
        }
    }
}

/// Builds the antenna data `z = sum_s a(dir_s) s(t) + n(t)`.
///
/// Sources are summed in list order; moving sources use the direction at the
/// centre of each [`MOTION_BLOCK`]-sample block.
pub fn synthesize(scene: &Scene) -> Result<ArraySnapshot, SceneError> {
    scene.validate()?;
    let n = scene.n_samples;
    let m = scene.geometry.n_antennas();
    let fs = scene.sample_rate;

    let waveforms = scene
        .sources
        .par_iter()
        .enumerate()
        .map(|(i, source)| {
            source
                .waveform(n, fs, scene.source_seed(i))
                .map_err(|error| SceneError::Source { source_index: i, error })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut data = CMatrix::zeros(m, n);
    for (i, (source, wave)) in scene.sources.iter().zip(&waveforms).enumerate() {
        let samples = wave.samples();
        let mut block_start = 0;
        while block_start < n {
            let block_end = (block_start + MOTION_BLOCK).min(n);
            let t_center = scene.t0 + 0.5 * (block_start + block_end) as f64 / fs;
            let dir = source.trajectory.position(t_center);
            if !dir.is_visible() {
                return Err(SceneError::TrajectoryLeavesSky {
                    source_index: i,
                    time: t_center,
                });
            }
            let a = steering_vector(&scene.geometry, dir);
            for k in block_start..block_end {
                let s = samples[k];
                let mut col = data.column_mut(k);
                for (z, ak) in col.iter_mut().zip(a.iter()) {
                    *z += ak * s;
                }
            }
            block_start = block_end;
        }
    }

    if scene.system_noise_power > 0.0 {
        let noise_seed = derive_seed(scene.seed, NOISE_STREAM);
        let rows = (0..m)
            .into_par_iter()
            .map(|ant| siggen::gen_noise(n, scene.system_noise_power, derive_seed(noise_seed, ant as u64)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|error| SceneError::Source {
                source_index: scene.sources.len(),
                error,
            })?;
        for (ant, row) in rows.iter().enumerate() {
            for (k, v) in row.samples().iter().enumerate() {
                data[(ant, k)] += v;
            }
        }
    }

    Ok(ArraySnapshot {
        data,
        sample_rate: fs,
        t0: scene.t0,
    })
}
