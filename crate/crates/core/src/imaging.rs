//! Beamformed skymaps from classical and cyclic correlation matrices.
//!
//! Pixel `(i, j)` looks in direction `(l_i, m_j)` and holds the beamformer
//! output `a^H R a / M^2`, so a unit-power point source reads 1.0 at its
//! own pixel. Pixels outside the unit disk are masked to exactly zero.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arraysim::{steering_vector, ArrayGeometry, DirectionLM};
use crate::cyclospec::{CorrMatrix, CyclicCorrMatrix};
use crate::{robust_threshold, CMatrix};

/// Peak threshold in normalised MADs above the median unmasked pixel.
pub const PEAK_MADS: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImagingError {
    #[error("matrix is {matrix}x{matrix} but the array has {antennas} antennas")]
    DimensionMismatch { matrix: usize, antennas: usize },
    #[error("grid bounds must satisfy -1 <= min < max <= 1 (got {axis} in [{min}, {max}])")]
    BadBounds { axis: char, min: f64, max: f64 },
    #[error("grid needs at least 2 pixels per axis (got {0} x {1})")]
    TooFewPixels(usize, usize),
    #[error("max_peaks must be at least 1")]
    NoPeaksRequested,
    #[error("power array has {got} entries, grid needs {expected}")]
    PowerLength { got: usize, expected: usize },
}

/// Regular `(l, m)` pixel grid; pixel centres include both bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkymapGrid {
    pub l_min: f64,
    pub l_max: f64,
    pub m_min: f64,
    pub m_max: f64,
    pub n_l: usize,
    pub n_m: usize,
}

impl Default for SkymapGrid {
    /// 128 x 128 over the full `[-1, 1]^2` square.
    fn default() -> Self {
        SkymapGrid {
            l_min: -1.0,
            l_max: 1.0,
            m_min: -1.0,
            m_max: 1.0,
            n_l: 128,
            n_m: 128,
        }
    }
}

impl SkymapGrid {
    pub fn validate(&self) -> Result<(), ImagingError> {
        for (axis, min, max) in [('l', self.l_min, self.l_max), ('m', self.m_min, self.m_max)] {
            if !(min >= -1.0 && max <= 1.0 && min < max) {
                return Err(ImagingError::BadBounds { axis, min, max });
            }
        }
        if self.n_l < 2 || self.n_m < 2 {
            return Err(ImagingError::TooFewPixels(self.n_l, self.n_m));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_l * self.n_m
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn l_step(&self) -> f64 {
        (self.l_max - self.l_min) / (self.n_l - 1) as f64
    }

    pub fn m_step(&self) -> f64 {
        (self.m_max - self.m_min) / (self.n_m - 1) as f64
    }

    pub fn l_at(&self, i: usize) -> f64 {
        self.l_min + i as f64 * self.l_step()
    }

    pub fn m_at(&self, j: usize) -> f64 {
        self.m_min + j as f64 * self.m_step()
    }

    /// Pixel centre, which may lie outside the unit disk.
    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        (self.l_at(i), self.m_at(j))
    }

    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        let (l, m) = self.coords(i, j);
        l * l + m * m > 1.0
    }

    /// Nearest pixel to a direction, clamped to the grid.
    pub fn nearest_pixel(&self, dir: DirectionLM) -> (usize, usize) {
        let fi = ((dir.l - self.l_min) / self.l_step()).round();
        let fj = ((dir.m - self.m_min) / self.m_step()).round();
        (
            fi.clamp(0.0, (self.n_l - 1) as f64) as usize,
            fj.clamp(0.0, (self.n_m - 1) as f64) as usize,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Classical,
    Cyclic,
    ConjugateCyclic,
}

impl MapKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MapKind::Classical => "classical",
            MapKind::Cyclic => "cyclic",
            MapKind::ConjugateCyclic => "conjugate_cyclic",
        }
    }

    pub fn parse(s: &str) -> Option<MapKind> {
        match s {
            "classical" => Some(MapKind::Classical),
            "cyclic" => Some(MapKind::Cyclic),
            "conjugate_cyclic" => Some(MapKind::ConjugateCyclic),
            _ => None,
        }
    }
}

/// Non-negative pixel powers, stored row-major with `l` as the row index.
#[derive(Debug, Clone, PartialEq)]
pub struct Skymap {
    pub grid: SkymapGrid,
    pub power: Vec<f64>,
    pub kind: MapKind,
    /// Cyclic frequency for the cyclic kinds.
    pub alpha: Option<f64>,
}

impl Skymap {
    pub fn new(grid: SkymapGrid, power: Vec<f64>, kind: MapKind, alpha: Option<f64>) -> Result<Self, ImagingError> {
        grid.validate()?;
        if power.len() != grid.len() {
            return Err(ImagingError::PowerLength {
                got: power.len(),
                expected: grid.len(),
            });
        }
        Ok(Skymap {
            grid,
            power,
            kind,
            alpha,
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.power[i * self.grid.n_m + j]
    }

    pub fn max(&self) -> f64 {
        self.power.iter().copied().fold(0.0, f64::max)
    }

    /// Pixel of the largest value (first in row-major order on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (idx, &v) in self.power.iter().enumerate() {
            if v > self.power[best] {
                best = idx;
            }
        }
        (best / self.grid.n_m, best % self.grid.n_m)
    }

    /// Value at the pixel nearest to `dir`.
    pub fn at_direction(&self, dir: DirectionLM) -> f64 {
        let (i, j) = self.grid.nearest_pixel(dir);
        self.get(i, j)
    }

    /// True when no 8-neighbour exceeds pixel `(i, j)`.
    pub fn is_local_max(&self, i: usize, j: usize) -> bool {
        let v = self.get(i, j);
        neighbours(&self.grid, i, j).all(|(a, b)| self.get(a, b) <= v)
    }
}

fn neighbours(grid: &SkymapGrid, i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> {
    let (n_l, n_m) = (grid.n_l as isize, grid.n_m as isize);
    (-1isize..=1)
        .flat_map(move |di| (-1isize..=1).map(move |dj| (di, dj)))
        .filter(|&(di, dj)| di != 0 || dj != 0)
        .map(move |(di, dj)| (i as isize + di, j as isize + dj))
        .filter(move |&(a, b)| a >= 0 && b >= 0 && a < n_l && b < n_m)
        .map(|(a, b)| (a as usize, b as usize))
}

/// Quadratic form evaluated at every unmasked pixel; `conj_right` uses
/// `conj(a)` on the right-hand side.
fn beamform(
    values: &CMatrix,
    geom: &ArrayGeometry,
    grid: &SkymapGrid,
    conj_right: bool,
    reduce: impl Fn(Complex64) -> f64 + Sync,
) -> Result<Vec<f64>, ImagingError> {
    grid.validate()?;
    let m = geom.n_antennas();
    if values.nrows() != m || values.ncols() != m {
        return Err(ImagingError::DimensionMismatch {
            matrix: values.nrows(),
            antennas: m,
        });
    }
    let norm = (m * m) as f64;
    Ok((0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / grid.n_m, idx % grid.n_m);
            if grid.is_masked(i, j) {
                return 0.0;
            }
            let (l, mm) = grid.coords(i, j);
            let a = steering_vector(geom, DirectionLM { l, m: mm });
            let right = if conj_right { a.map(|v| v.conj()) } else { a.clone() };
            let q = a.dotc(&(values * right));
            let v = reduce(q) / norm;
            if v.is_finite() && v > 0.0 {
                v
            } else {
                0.0
            }
        })
        .collect())
}

/// Classical skymap `Re(a^H R a) / M^2`.
pub fn skymap(r: &CorrMatrix, geom: &ArrayGeometry, grid: &SkymapGrid) -> Result<Skymap, ImagingError> {
    let power = beamform(&r.values, geom, grid, false, |q| q.re)?;
    Ok(Skymap {
        grid: *grid,
        power,
        kind: MapKind::Classical,
        alpha: None,
    })
}

/// Cyclic skymap `|a^H R^a a| / M^2`, or `|a^H Rconj^a conj(a)| / M^2` for
/// conjugate matrices.
pub fn cyclic_skymap(ra: &CyclicCorrMatrix, geom: &ArrayGeometry, grid: &SkymapGrid) -> Result<Skymap, ImagingError> {
    let power = beamform(&ra.values, geom, grid, ra.conjugate, |q| q.norm())?;
    Ok(Skymap {
        grid: *grid,
        power,
        kind: if ra.conjugate {
            MapKind::ConjugateCyclic
        } else {
            MapKind::Cyclic
        },
        alpha: Some(ra.alpha),
    })
}

/// A localised skymap peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Sub-pixel refined direction.
    pub direction: DirectionLM,
    /// Interpolated peak power (never below the pixel value).
    pub power: f64,
    /// Grid pixel holding the local maximum.
    pub pixel: (usize, usize),
}

/// Local maxima above `median + 5 MAD` of the unmasked pixels, refined with
/// a quadratic fit over the 3 x 3 neighbourhood, strongest first.
pub fn locate_peaks(map: &Skymap, max_peaks: usize) -> Result<Vec<Peak>, ImagingError> {
    if max_peaks == 0 {
        return Err(ImagingError::NoPeaksRequested);
    }
    let grid = &map.grid;
    let unmasked: Vec<f64> = (0..grid.len())
        .filter(|idx| !grid.is_masked(idx / grid.n_m, idx % grid.n_m))
        .map(|idx| map.power[idx])
        .collect();
    let Some(threshold) = robust_threshold(&unmasked, PEAK_MADS) else {
        return Ok(Vec::new());
    };

    let mut peaks = Vec::new();
    for i in 0..grid.n_l {
        for j in 0..grid.n_m {
            if grid.is_masked(i, j) {
                continue;
            }
            let v = map.get(i, j);
            if v <= threshold {
                continue;
            }
            let idx = i * grid.n_m + j;
            // Strictly above earlier neighbours, at least equal to later ones,
            // so a plateau yields exactly one maximum.
            let is_max = neighbours(grid, i, j).all(|(a, b)| {
                let w = map.get(a, b);
                if a * grid.n_m + b < idx {
                    v > w
                } else {
                    v >= w
                }
            });
            if is_max {
                peaks.push(refine(map, i, j));
            }
        }
    }
    peaks.sort_by(|a, b| b.power.total_cmp(&a.power).then(a.pixel.cmp(&b.pixel)));
    peaks.truncate(max_peaks);
    Ok(peaks)
}

fn refine(map: &Skymap, i: usize, j: usize) -> Peak {
    let grid = &map.grid;
    let centre = map.get(i, j);
    let (l0, m0) = grid.coords(i, j);
    let fallback = Peak {
        direction: DirectionLM { l: l0, m: m0 },
        power: centre,
        pixel: (i, j),
    };
    if i == 0 || j == 0 || i + 1 == grid.n_l || j + 1 == grid.n_m {
        return fallback;
    }
    let mut f = [[0.0; 3]; 3];
    for (a, row) in f.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let (pi, pj) = (i + a - 1, j + b - 1);
            if grid.is_masked(pi, pj) {
                return fallback;
            }
            *v = map.get(pi, pj);
        }
    }

    // Least-squares fit of c0 + c1 x + c2 y + c3 (x^2 - 2/3) + c4 (y^2 - 2/3) + c5 x y
    // on the 3 x 3 stencil; the basis is orthogonal there.
    let (mut s0, mut s1, mut s2, mut s3, mut s4, mut s5) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, row) in f.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            let x = a as f64 - 1.0;
            let y = b as f64 - 1.0;
            s0 += v;
            s1 += x * v;
            s2 += y * v;
            s3 += (x * x - 2.0 / 3.0) * v;
            s4 += (y * y - 2.0 / 3.0) * v;
            s5 += x * y * v;
        }
    }
    let (c0, c1, c2, c3, c4, c5) = (s0 / 9.0, s1 / 6.0, s2 / 6.0, s3 / 2.0, s4 / 2.0, s5 / 4.0);

    let det = 4.0 * c3 * c4 - c5 * c5;
    let (mut dx, mut dy) = (f64::NAN, f64::NAN);
    if c3 < 0.0 && det > 0.0 {
        dx = (-2.0 * c4 * c1 + c5 * c2) / det;
        dy = (-2.0 * c3 * c2 + c5 * c1) / det;
    }
    if !(dx.abs() <= 1.0 && dy.abs() <= 1.0) {
        dx = parabola_offset(f[0][1], f[1][1], f[2][1]);
        dy = parabola_offset(f[1][0], f[1][1], f[1][2]);
    }
    let fitted = c0 + c1 * dx + c2 * dy + c3 * (dx * dx - 2.0 / 3.0) + c4 * (dy * dy - 2.0 / 3.0) + c5 * dx * dy;
    let l = l0 + dx * grid.l_step();
    let m = m0 + dy * grid.m_step();
    match DirectionLM::new(l, m) {
        Ok(direction) => Peak {
            direction,
            power: if fitted.is_finite() { fitted.max(centre) } else { centre },
            pixel: (i, j),
        },
        Err(_) => fallback,
    }
}

/// Vertex offset of the parabola through three equally spaced samples, in [-0.5, 0.5].
fn parabola_offset(left: f64, centre: f64, right: f64) -> f64 {
    let curvature = left - 2.0 * centre + right;
    if curvature >= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / curvature).clamp(-0.5, 0.5)
}
