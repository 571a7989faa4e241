//! On-disk formats: spectrum CSV, skymap CSV / PGM / sidecar, snapshot JSON.
//!
//! Every writer has a matching reader; numbers are written with Rust's
//! shortest round-trip formatting, so CSV and JSON re-read bit-exactly.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arraysim::{ArrayGeometry, ArraySnapshot};
use crate::cyclospec::CyclicSpectrum;
use crate::imaging::{MapKind, Skymap, SkymapGrid};
use crate::{CMatrix, Complex64};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("bad PGM data: {0}")]
    Pgm(String),
    #[error("bad sidecar: {0}")]
    Sidecar(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn parse_err(line: usize, reason: impl Into<String>) -> FormatError {
    FormatError::Parse {
        line,
        reason: reason.into(),
    }
}

pub const SPECTRUM_HEADER: &str = "alpha_hz,magnitude";

/// `# conjugate=<bool>` comment, a column header, then one row per α.
pub fn spectrum_to_csv(spec: &CyclicSpectrum) -> String {
    let mut out = format!("# conjugate={}\n{SPECTRUM_HEADER}\n", spec.conjugate);
    for (a, m) in spec.alphas.iter().zip(&spec.magnitudes) {
        let _ = writeln!(out, "{a},{m}");
    }
    out
}

pub fn spectrum_from_csv(text: &str) -> Result<CyclicSpectrum, FormatError> {
    let mut lines = text.lines().enumerate();
    let conjugate = match lines.next() {
        Some((_, "# conjugate=true")) => true,
        Some((_, "# conjugate=false")) => false,
        _ => return Err(parse_err(1, "expected '# conjugate=<bool>'")),
    };
    match lines.next() {
        Some((_, SPECTRUM_HEADER)) => {}
        _ => return Err(parse_err(2, format!("expected header '{SPECTRUM_HEADER}'"))),
    }
    let (mut alphas, mut mags) = (Vec::new(), Vec::new());
    for (i, line) in lines {
        let (a, m) = line
            .split_once(',')
            .ok_or_else(|| parse_err(i + 1, "expected two columns"))?;
        alphas.push(a.parse().map_err(|_| parse_err(i + 1, format!("bad alpha {a:?}")))?);
        mags.push(
            m.parse()
                .map_err(|_| parse_err(i + 1, format!("bad magnitude {m:?}")))?,
        );
    }
    CyclicSpectrum::new(alphas, mags, conjugate).map_err(|e| parse_err(0, e.to_string()))
}

/// One CSV row per `l` index, one column per `m` index.
pub fn skymap_to_csv(map: &Skymap) -> String {
    let mut out = String::new();
    for row in map.power.chunks(map.grid.n_m) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn skymap_from_csv(text: &str, grid: SkymapGrid, kind: MapKind, alpha: Option<f64>) -> Result<Skymap, FormatError> {
    let mut power = Vec::with_capacity(grid.len());
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let before = power.len();
        for cell in line.split(',') {
            power.push(
                cell.parse::<f64>()
                    .map_err(|_| parse_err(i + 1, format!("bad value {cell:?}")))?,
            );
        }
        if power.len() - before != grid.n_m {
            return Err(parse_err(i + 1, format!("expected {} columns", grid.n_m)));
        }
        rows += 1;
    }
    if rows != grid.n_l {
        return Err(parse_err(rows, format!("expected {} rows, got {rows}", grid.n_l)));
    }
    Skymap::new(grid, power, kind, alpha).map_err(|e| parse_err(0, e.to_string()))
}

/// Binary 16-bit PGM: width `n_l` (l increasing to the right), height `n_m`
/// (m increasing upwards), big-endian samples scaled linearly from
/// `[0, max]` to `[0, 65535]`.
pub fn skymap_to_pgm(map: &Skymap) -> Vec<u8> {
    let g = &map.grid;
    let scale = map.max();
    let mut out = format!("P5\n{} {}\n65535\n", g.n_l, g.n_m).into_bytes();
    out.reserve(2 * g.len());
    for row in 0..g.n_m {
        let j = g.n_m - 1 - row;
        for i in 0..g.n_l {
            let v = if scale > 0.0 {
                (map.get(i, j) / scale * 65535.0).round().clamp(0.0, 65535.0) as u16
            } else {
                0
            };
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

/// Sidecar text describing a PGM: one `key=value` per line.
pub fn skymap_sidecar(map: &Skymap) -> String {
    let g = &map.grid;
    let alpha = map.alpha.map_or_else(|| "none".to_string(), |a| a.to_string());
    format!(
        "format=pgm_p5_u16_be\nkind={}\nalpha_hz={alpha}\nscale={}\nl_min={}\nl_max={}\nm_min={}\nm_max={}\nn_l={}\nn_m={}\n",
        map.kind.as_str(),
        map.max(),
        g.l_min,
        g.l_max,
        g.m_min,
        g.m_max,
        g.n_l,
        g.n_m
    )
}

/// Parsed PGM sidecar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sidecar {
    pub kind: MapKind,
    pub alpha: Option<f64>,
    /// Power represented by the sample value 65535.
    pub scale: f64,
    pub grid: SkymapGrid,
}

pub fn parse_sidecar(text: &str) -> Result<Sidecar, FormatError> {
    let bad = |s: String| FormatError::Sidecar(s);
    let mut fields = std::collections::BTreeMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got {line:?}")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("missing {k}")));
    let num = |k: &str| -> Result<f64, FormatError> { get(k)?.parse().map_err(|_| bad(format!("bad number for {k}"))) };
    let count =
        |k: &str| -> Result<usize, FormatError> { get(k)?.parse().map_err(|_| bad(format!("bad count for {k}"))) };
    if get("format")? != "pgm_p5_u16_be" {
        return Err(bad("unsupported format".into()));
    }
    let kind = MapKind::parse(get("kind")?).ok_or_else(|| bad("unknown kind".into()))?;
    let alpha = match get("alpha_hz")? {
        "none" => None,
        a => Some(a.parse().map_err(|_| bad("bad alpha_hz".into()))?),
    };
    let grid = SkymapGrid {
        l_min: num("l_min")?,
        l_max: num("l_max")?,
        m_min: num("m_min")?,
        m_max: num("m_max")?,
        n_l: count("n_l")?,
        n_m: count("n_m")?,
    };
    grid.validate().map_err(|e| bad(e.to_string()))?;
    Ok(Sidecar {
        kind,
        alpha,
        scale: num("scale")?,
        grid,
    })
}

/// Reads a PGM written by [`skymap_to_pgm`]; pixel values carry the 16-bit
/// quantisation of the original map.
pub fn skymap_from_pgm(bytes: &[u8], sidecar: &Sidecar) -> Result<Skymap, FormatError> {
    let g = sidecar.grid;
    let header = format!("P5\n{} {}\n65535\n", g.n_l, g.n_m);
    let body = bytes
        .strip_prefix(header.as_bytes())
        .ok_or_else(|| FormatError::Pgm("header does not match sidecar".into()))?;
    if body.len() != 2 * g.len() {
        return Err(FormatError::Pgm(format!(
            "expected {} bytes of samples, got {}",
            2 * g.len(),
            body.len()
        )));
    }
    let mut power = vec![0.0; g.len()];
    for (k, px) in body.chunks_exact(2).enumerate() {
        let (row, i) = (k / g.n_l, k % g.n_l);
        let j = g.n_m - 1 - row;
        let v = u16::from_be_bytes([px[0], px[1]]) as f64;
        power[i * g.n_m + j] = v / 65535.0 * sidecar.scale;
    }
    Skymap::new(g, power, sidecar.kind, sidecar.alpha).map_err(|e| FormatError::Pgm(e.to_string()))
}

/// JSON form of a snapshot together with the array it was recorded on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotFile {
    pub geometry: ArrayGeometry,
    pub sample_rate: f64,
    pub t0: f64,
    /// `re[antenna][sample]`.
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl SnapshotFile {
    pub fn new(geometry: &ArrayGeometry, snap: &ArraySnapshot) -> SnapshotFile {
        let rows = |f: fn(&Complex64) -> f64| {
            (0..snap.n_antennas())
                .map(|a| snap.data.row(a).iter().map(f).collect())
                .collect()
        };
        SnapshotFile {
            geometry: geometry.clone(),
            sample_rate: snap.sample_rate,
            t0: snap.t0,
            re: rows(|z| z.re),
            im: rows(|z| z.im),
        }
    }

    pub fn into_parts(self) -> Result<(ArrayGeometry, ArraySnapshot), FormatError> {
        let m = self.geometry.n_antennas();
        if self.re.len() != m || self.im.len() != m {
            return Err(FormatError::Snapshot(format!(
                "expected {m} antenna rows, got {} re / {} im",
                self.re.len(),
                self.im.len()
            )));
        }
        let n = self.re.first().map_or(0, Vec::len);
        if n == 0 || self.re.iter().chain(&self.im).any(|r| r.len() != n) {
            return Err(FormatError::Snapshot("rows must be non-empty and equal length".into()));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(FormatError::Snapshot("sample_rate must be positive".into()));
        }
        self.geometry
            .validate()
            .map_err(|e| FormatError::Snapshot(e.to_string()))?;
        let data = CMatrix::from_fn(m, n, |a, k| Complex64::new(self.re[a][k], self.im[a][k]));
        Ok((
            self.geometry,
            ArraySnapshot {
                data,
                sample_rate: self.sample_rate,
                t0: self.t0,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arraysim::{steering_vector, DirectionLM};
    use crate::cyclospec::CorrMatrix;
    use crate::imaging::skymap;

    fn sample_map() -> Skymap {
        let geom = ArrayGeometry::random_disk(8, 1.4e9, 6.0, 1).unwrap();
        let a = steering_vector(&geom, DirectionLM::new(0.3, -0.1).unwrap());
        let r = CorrMatrix {
            values: &a * a.adjoint(),
            n_samples: 1,
        };
        let grid = SkymapGrid {
            n_l: 12,
            n_m: 9,
            ..Default::default()
        };
        skymap(&r, &geom, &grid).unwrap()
    }

    #[test]
    fn spectrum_round_trip() {
        let spec = CyclicSpectrum::new(vec![-2.5, 0.0, 1.0 / 3.0], vec![0.1, 1e-300, 7.0], true).unwrap();
        let csv = spectrum_to_csv(&spec);
        assert!(csv.starts_with("# conjugate=true\nalpha_hz,magnitude\n-2.5,0.1\n"));
        assert_eq!(spectrum_from_csv(&csv).unwrap(), spec);
        assert!(spectrum_from_csv("alpha_hz,magnitude\n1,2\n").is_err());
    }

    #[test]
    fn skymap_csv_round_trip() {
        let map = sample_map();
        let back = skymap_from_csv(&skymap_to_csv(&map), map.grid, map.kind, map.alpha).unwrap();
        assert_eq!(back, map);
        let short = SkymapGrid { n_l: 11, ..map.grid };
        assert!(skymap_from_csv(&skymap_to_csv(&map), short, map.kind, None).is_err());
    }

    #[test]
    fn pgm_layout_and_round_trip() {
        let map = sample_map();
        let pgm = skymap_to_pgm(&map);
        let header = b"P5\n12 9\n65535\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(pgm.len(), header.len() + 2 * 12 * 9);

        // The brightest pixel maps to 65535 at image row n_m-1-j, column i.
        let (i, j) = map.argmax();
        let off = header.len() + 2 * ((8 - j) * 12 + i);
        assert_eq!(&pgm[off..off + 2], &[0xff, 0xff]);

        let side = parse_sidecar(&skymap_sidecar(&map)).unwrap();
        assert_eq!(side.grid, map.grid);
        assert_eq!(side.kind, MapKind::Classical);
        assert_eq!(side.alpha, None);
        let back = skymap_from_pgm(&pgm, &side).unwrap();
        for (a, b) in back.power.iter().zip(&map.power) {
            assert!((a - b).abs() <= 0.5 / 65535.0 * map.max() + 1e-15);
        }
    }

    #[test]
    fn sidecar_records_alpha() {
        let mut map = sample_map();
        map.kind = MapKind::ConjugateCyclic;
        map.alpha = Some(125000.0);
        let text = skymap_sidecar(&map);
        assert!(text.contains("kind=conjugate_cyclic\nalpha_hz=125000\n"));
        let side = parse_sidecar(&text).unwrap();
        assert_eq!(side.alpha, Some(125000.0));
        assert!(parse_sidecar("format=png\n").is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let geom = ArrayGeometry::random_disk(3, 1.4e9, 6.0, 2).unwrap();
        let snap = ArraySnapshot {
            data: CMatrix::from_fn(3, 5, |a, k| {
                Complex64::new(a as f64 + 0.1 * k as f64, -1.0 / (1 + k) as f64)
            }),
            sample_rate: 1e6,
            t0: 0.25,
        };
        let json = serde_json::to_string(&SnapshotFile::new(&geom, &snap)).unwrap();
        let file: SnapshotFile = serde_json::from_str(&json).unwrap();
        let (g, s) = file.into_parts().unwrap();
        assert_eq!(g, geom);
        assert_eq!(s, snap);
    }
}
