//! Scenario files and the end-to-end pipeline.
//!
//! A scenario is one JSON document. Unknown keys are rejected and every
//! validation error names the offending key path.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arraysim::{synthesize, ArrayGeometry, ArraySnapshot, DirectionLM, Scene, SceneError};
use crate::cyclospec::{
    bin_grid, corr_matrix, cyclic_corr_matrix, cyclic_spectrum, detect_cyclic_freqs, CyclicSpectrum, CycloError,
};
use crate::formats::{self, FormatError, SnapshotFile};
use crate::imaging::{cyclic_skymap, locate_peaks, skymap, ImagingError, Peak, Skymap, SkymapGrid};
use crate::sched::{
    flag_mask, schedule, BandRule, Channelization, FlagMask, Mode, PlanParams, Program, SchedError, Schedule,
    SiteModel, EXACT_MAX_PROGRAMS, EXACT_MAX_SLOTS,
};
use crate::siggen::{derive_seed, SourceSpec};
use crate::tracker::{Detection, RfiTrack, TrackLog, Tracker, TrackerConfig, TrackerError};

pub const SCHEMA: &str = "cyclosky-scenario/1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ConfigError {
    fn invalid(key: impl Into<String>, message: impl ToString) -> ConfigError {
        ConfigError::Invalid {
            key: key.into(),
            message: message.to_string(),
        }
    }

    /// Key path of a validation failure.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { key, .. } => Some(key),
            ConfigError::Io { .. } => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("frame {frame}: {source}")]
    Scene { frame: usize, source: SceneError },
    #[error("frame {frame}: {source}")]
    Cyclo { frame: usize, source: CycloError },
    #[error("frame {frame}: {source}")]
    Imaging { frame: usize, source: ImagingError },
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: String,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub scene: SceneConfig,
    #[serde(default)]
    pub frames: FramesConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub imaging: ImagingConfig,
    #[serde(default)]
    pub tracker: TrackerSection,
    #[serde(default)]
    pub schedule: Option<ScheduleConfig>,
}

fn default_noise_power() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub array: ArrayConfig,
    pub sample_rate_hz: f64,
    /// Samples per frame.
    pub n_samples: usize,
    #[serde(default = "default_noise_power")]
    pub system_noise_power: f64,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
}

/// Either explicit `positions` or a random disk of `n_antennas`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub reference_freq_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_antennas: Option<usize>,
    /// Disk diameter in wavelengths (default 6).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aperture_wavelengths: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 2]>>,
    /// Layout seed; defaults to a stream of the global seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FramesConfig {
    pub count: usize,
    /// Start-to-start spacing; defaults to the frame duration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval_s: Option<f64>,
}

impl Default for FramesConfig {
    fn default() -> Self {
        FramesConfig {
            count: 1,
            interval_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub cyclic: bool,
    pub conjugate: bool,
    /// Inclusive DFT-bin range `[first, last]` of the non-conjugate α grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cyclic_bins: Option<[i64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conjugate_bins: Option<[i64; 2]>,
    /// Cyclic frequencies imaged per statistic and frame, strongest first.
    pub max_alphas: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            cyclic: true,
            conjugate: true,
            cyclic_bins: None,
            conjugate_bins: None,
            max_alphas: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImagingConfig {
    pub grid: SkymapGrid,
    /// Peaks reported from the classical map.
    pub max_peaks: usize,
    /// Detections taken from each cyclic map.
    pub peaks_per_alpha: usize,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        ImagingConfig {
            grid: SkymapGrid::default(),
            max_peaks: 4,
            peaks_per_alpha: 1,
        }
    }
}

/// Tracker settings; `alpha_tol` defaults to one α-grid step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerSection {
    pub s_stat: f64,
    pub s_fast: f64,
    pub gate_sigma: f64,
    pub gate_min: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_tol: Option<f64>,
    pub drop_after: u32,
    pub min_points: usize,
}

impl Default for TrackerSection {
    fn default() -> Self {
        let d = TrackerConfig::default();
        TrackerSection {
            s_stat: d.s_stat,
            s_fast: d.s_fast,
            gate_sigma: d.gate_sigma,
            gate_min: d.gate_min,
            alpha_tol: None,
            drop_after: d.drop_after,
            min_points: d.min_points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub site: SiteModel,
    /// Number of slots.
    pub horizon: usize,
    /// Time of slot 0 on the frame clock; defaults to the end of the last frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0_s: Option<f64>,
    pub programs: Vec<Program>,
    #[serde(default)]
    pub params: PlanParams,
    #[serde(default)]
    pub bands: Vec<BandRule>,
    pub channels: Channelization,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.site
            .validate()
            .map_err(|e| ConfigError::invalid("schedule.site", e))?;
        if self.horizon == 0 {
            return Err(ConfigError::invalid("schedule.horizon", "must be at least 1"));
        }
        if let Some(t0) = self.t0_s {
            if !t0.is_finite() {
                return Err(ConfigError::invalid("schedule.t0_s", "must be finite"));
            }
        }
        for (i, p) in self.programs.iter().enumerate() {
            let key = format!("schedule.programs[{i}]");
            p.validate().map_err(|e| ConfigError::invalid(&key, e))?;
            if self.programs[..i].iter().any(|q| q.id == p.id) {
                return Err(ConfigError::invalid(key, format!("duplicate program id {}", p.id)));
            }
        }
        self.params
            .validate()
            .map_err(|e| ConfigError::invalid("schedule.params", e))?;
        if self.params.mode == Mode::Exact {
            if self.horizon > EXACT_MAX_SLOTS {
                return Err(ConfigError::invalid(
                    "schedule.horizon",
                    format!("exact mode supports at most {EXACT_MAX_SLOTS} slots"),
                ));
            }
            if self.programs.len() > EXACT_MAX_PROGRAMS {
                return Err(ConfigError::invalid(
                    "schedule.programs",
                    format!("exact mode supports at most {EXACT_MAX_PROGRAMS} programs"),
                ));
            }
        }
        for (i, b) in self.bands.iter().enumerate() {
            if !(b.band[0] < b.band[1] && b.alpha_tol >= 0.0) {
                return Err(ConfigError::invalid(
                    format!("schedule.bands[{i}]"),
                    "band must satisfy f_lo < f_hi and alpha_tol >= 0",
                ));
            }
        }
        self.channels
            .validate()
            .map_err(|e| ConfigError::invalid("schedule.channels", e))
    }
}

impl ScenarioConfig {
    /// Parses and validates a scenario document.
    pub fn from_json(text: &str) -> Result<ScenarioConfig, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let key = if path == "." { "<root>".to_string() } else { path };
            ConfigError::invalid(key, e.into_inner())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<(ScenarioConfig, Vec<u8>), ConfigError> {
        let bytes = fs::read(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let text = String::from_utf8_lossy(&bytes);
        Ok((ScenarioConfig::from_json(&text)?, bytes))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA {
            return Err(ConfigError::invalid("schema", format!("expected {SCHEMA:?}")));
        }
        let sc = &self.scene;
        if !(sc.sample_rate_hz > 0.0 && sc.sample_rate_hz.is_finite()) {
            return Err(ConfigError::invalid("scene.sample_rate_hz", "must be positive"));
        }
        if sc.n_samples == 0 {
            return Err(ConfigError::invalid("scene.n_samples", "must be at least 1"));
        }
        if !(sc.system_noise_power > 0.0 && sc.system_noise_power.is_finite()) {
            return Err(ConfigError::invalid("scene.system_noise_power", "must be positive"));
        }
        self.geometry()?;

        if self.frames.count == 0 {
            return Err(ConfigError::invalid("frames.count", "must be at least 1"));
        }
        if let Some(dt) = self.frames.interval_s {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(ConfigError::invalid("frames.interval_s", "must be positive"));
            }
        }
        for f in 0..self.frames.count {
            let scene = self.frame_scene(f, self.geometry()?);
            for (i, s) in scene.sources.iter().enumerate() {
                s.validate(sc.sample_rate_hz)
                    .map_err(|e| ConfigError::invalid(format!("scene.sources[{i}]"), e))?;
            }
            scene.validate().map_err(|e| match e {
                SceneError::TrajectoryLeavesSky { source_index, time } => ConfigError::invalid(
                    format!("scene.sources[{source_index}].trajectory"),
                    format!("leaves the visible sky at t = {time} s (frame {f})"),
                ),
                other => ConfigError::invalid("scene", other),
            })?;
        }

        let n = sc.n_samples as i64;
        for (key, bins, lo, hi) in [
            ("analysis.cyclic_bins", self.analysis.cyclic_bins, -n / 2, n / 2),
            ("analysis.conjugate_bins", self.analysis.conjugate_bins, -n / 2, n / 2),
        ] {
            if let Some([a, b]) = bins {
                if !(lo <= a && a <= b && b <= hi) {
                    return Err(ConfigError::invalid(key, format!("need {lo} <= first <= last <= {hi}")));
                }
            }
        }
        if self.analysis.max_alphas == 0 {
            return Err(ConfigError::invalid("analysis.max_alphas", "must be at least 1"));
        }
        self.imaging
            .grid
            .validate()
            .map_err(|e| ConfigError::invalid("imaging.grid", e))?;
        if self.imaging.max_peaks == 0 {
            return Err(ConfigError::invalid("imaging.max_peaks", "must be at least 1"));
        }
        if self.imaging.peaks_per_alpha == 0 {
            return Err(ConfigError::invalid("imaging.peaks_per_alpha", "must be at least 1"));
        }
        self.tracker_config()
            .validate()
            .map_err(|e| ConfigError::invalid("tracker", e))?;
        if let Some(s) = &self.schedule {
            s.validate()?;
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<ArrayGeometry, ConfigError> {
        let a = &self.scene.array;
        match (&a.positions, a.n_antennas) {
            (Some(_), Some(_)) => Err(ConfigError::invalid(
                "scene.array",
                "give either positions or n_antennas, not both",
            )),
            (None, None) => Err(ConfigError::invalid(
                "scene.array",
                "one of positions or n_antennas is required",
            )),
            (Some(pos), None) => {
                if a.aperture_wavelengths.is_some() {
                    return Err(ConfigError::invalid(
                        "scene.array.aperture_wavelengths",
                        "only valid with n_antennas",
                    ));
                }
                ArrayGeometry::new(pos.clone(), a.reference_freq_hz)
                    .map_err(|e| ConfigError::invalid("scene.array.positions", e))
            }
            (None, Some(n)) => {
                if n < 2 {
                    return Err(ConfigError::invalid("scene.array.n_antennas", "must be at least 2"));
                }
                let aperture = a.aperture_wavelengths.unwrap_or(6.0);
                if !(aperture > 0.0 && aperture.is_finite()) {
                    return Err(ConfigError::invalid(
                        "scene.array.aperture_wavelengths",
                        "must be positive",
                    ));
                }
                if !(a.reference_freq_hz > 0.0 && a.reference_freq_hz.is_finite()) {
                    return Err(ConfigError::invalid(
                        "scene.array.reference_freq_hz",
                        "must be positive",
                    ));
                }
                let seed = a.seed.unwrap_or_else(|| derive_seed(self.seed, LAYOUT_STREAM));
                ArrayGeometry::random_disk(n, a.reference_freq_hz, aperture, seed)
                    .map_err(|e| ConfigError::invalid("scene.array", e))
            }
        }
    }

    pub fn frame_duration(&self) -> f64 {
        self.scene.n_samples as f64 / self.scene.sample_rate_hz
    }

    pub fn frame_interval(&self) -> f64 {
        self.frames.interval_s.unwrap_or_else(|| self.frame_duration())
    }

    pub fn frame_start(&self, frame: usize) -> f64 {
        frame as f64 * self.frame_interval()
    }

    /// Timestamp given to detections from a frame (its centre).
    pub fn frame_time(&self, frame: usize) -> f64 {
        self.frame_start(frame) + 0.5 * self.frame_duration()
    }

    /// Scene for one frame; every frame draws fresh waveforms and noise.
    pub fn frame_scene(&self, frame: usize, geometry: ArrayGeometry) -> Scene {
        let sources = self
            .scene
            .sources
            .iter()
            .map(|s| SourceSpec {
                seed: s.seed.map(|seed| derive_seed(seed, frame as u64)),
                ..s.clone()
            })
            .collect();
        Scene {
            geometry,
            sources,
            n_samples: self.scene.n_samples,
            sample_rate: self.scene.sample_rate_hz,
            system_noise_power: self.scene.system_noise_power,
            seed: derive_seed(self.seed, frame as u64),
            t0: self.frame_start(frame),
        }
    }

    pub fn alpha_step(&self) -> f64 {
        self.scene.sample_rate_hz / self.scene.n_samples as f64
    }

    pub fn alpha_grid(&self, conjugate: bool) -> Vec<f64> {
        let n = self.scene.n_samples as i64;
        let [first, last] = if conjugate {
            self.analysis.conjugate_bins.unwrap_or([-n / 2, n - n / 2 - 1])
        } else {
            self.analysis.cyclic_bins.unwrap_or([1, n / 2])
        };
        bin_grid(self.scene.sample_rate_hz, self.scene.n_samples, first, last)
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        let t = &self.tracker;
        TrackerConfig {
            s_stat: t.s_stat,
            s_fast: t.s_fast,
            gate_sigma: t.gate_sigma,
            gate_min: t.gate_min,
            alpha_tol: t.alpha_tol.unwrap_or_else(|| self.alpha_step()),
            drop_after: t.drop_after,
            min_points: t.min_points,
        }
    }

    /// Slot-0 time of the schedule.
    pub fn schedule_t0(&self) -> f64 {
        self.schedule
            .as_ref()
            .and_then(|s| s.t0_s)
            .unwrap_or_else(|| self.frame_start(self.frames.count - 1) + self.frame_duration())
    }
}

const LAYOUT_STREAM: u64 = u64::MAX - 1;

/// Cyclic analysis of one statistic in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticProducts {
    pub spectrum: CyclicSpectrum,
    /// One map per imaged cyclic frequency, strongest first.
    pub maps: Vec<Skymap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameProducts {
    pub classical: Skymap,
    pub classical_peaks: Vec<Peak>,
    pub cyclic: Option<StatisticProducts>,
    pub conjugate: Option<StatisticProducts>,
    pub detections: Vec<Detection>,
}

/// Spectra, maps and detections for one snapshot.
pub fn analyze_frame(
    config: &ScenarioConfig,
    geometry: &ArrayGeometry,
    snap: &ArraySnapshot,
    time: f64,
    frame: usize,
) -> Result<FrameProducts, RunError> {
    let img = |source| RunError::Imaging { frame, source };
    let cyc = |source| RunError::Cyclo { frame, source };
    let r = corr_matrix(snap);
    let classical = skymap(&r, geometry, &config.imaging.grid).map_err(img)?;
    let classical_peaks = locate_peaks(&classical, config.imaging.max_peaks).map_err(img)?;

    let mut detections = Vec::new();
    let mut statistic = |conjugate: bool| -> Result<StatisticProducts, RunError> {
        let spectrum = cyclic_spectrum(snap, &config.alpha_grid(conjugate), conjugate).map_err(cyc)?;
        let found = detect_cyclic_freqs(&spectrum).map_err(cyc)?;
        let mut maps = Vec::new();
        for peak in found.iter().take(config.analysis.max_alphas) {
            let ra = cyclic_corr_matrix(snap, peak.alpha, conjugate).map_err(cyc)?;
            let map = cyclic_skymap(&ra, geometry, &config.imaging.grid).map_err(img)?;
            for p in locate_peaks(&map, config.imaging.peaks_per_alpha).map_err(img)? {
                detections.push(Detection {
                    time,
                    alpha: peak.alpha,
                    conjugate,
                    direction: p.direction,
                    power: p.power,
                });
            }
            maps.push(map);
        }
        Ok(StatisticProducts { spectrum, maps })
    };
    let cyclic = if config.analysis.cyclic {
        Some(statistic(false)?)
    } else {
        None
    };
    let conjugate = if config.analysis.conjugate {
        Some(statistic(true)?)
    } else {
        None
    };
    Ok(FrameProducts {
        classical,
        classical_peaks,
        cyclic,
        conjugate,
        detections,
    })
}

/// Schedule and flag mask from a set of tracks.
pub fn plan(config: &ScheduleConfig, tracks: &[RfiTrack], t0: f64) -> Result<(Schedule, FlagMask), SchedError> {
    let sched = schedule(
        &config.programs,
        &config.site,
        config.horizon,
        tracks,
        t0,
        &config.bands,
        &config.params,
    )?;
    let mask = flag_mask(
        tracks,
        &sched,
        &config.site,
        t0,
        config.params.exclusion_radius,
        &config.channels,
        &config.bands,
    )?;
    Ok((sched, mask))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Also write every frame's antenna data as JSON.
    pub save_snapshots: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// Files written, relative to the output directory, in write order.
    pub files: Vec<PathBuf>,
    pub detections: usize,
    pub tracks: Vec<RfiTrack>,
    pub schedule: Option<Schedule>,
}

#[derive(Serialize)]
struct PeakFile<'a> {
    frame: usize,
    time: f64,
    classical: &'a [Peak],
    detections: &'a [Detection],
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    schema: &'a str,
    config_sha256: String,
    seed: u64,
    frames: usize,
    created_unix_s: u64,
    files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Writes files under a root directory and remembers what was written.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<PathBuf>,
    hashes: Vec<String>,
}

impl OutputDir {
    pub fn new(root: &Path) -> OutputDir {
        OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
            hashes: Vec::new(),
        }
    }

    pub fn write(&mut self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<(), RunError> {
        let rel = rel.as_ref();
        let path = self.root.join(rel);
        let io = |source| RunError::Io {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io)?;
        }
        fs::write(&path, bytes).map_err(io)?;
        self.files.push(rel.to_path_buf());
        self.hashes.push(sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: impl AsRef<Path>, value: &T) -> Result<(), RunError> {
        let mut text = serde_json::to_string_pretty(value).map_err(FormatError::from)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    pub fn write_skymap(&mut self, stem: &str, map: &Skymap) -> Result<(), RunError> {
        self.write(format!("{stem}.csv"), formats::skymap_to_csv(map).as_bytes())?;
        self.write(format!("{stem}.pgm"), &formats::skymap_to_pgm(map))?;
        self.write(format!("{stem}.txt"), formats::skymap_sidecar(map).as_bytes())
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }
}

fn alpha_label(alpha: f64) -> String {
    format!("{alpha}")
}

/// Runs synthesis, analysis, tracking and planning, writing all artefacts
/// under `out`. `config_bytes` is hashed into the manifest.
pub fn run(
    config: &ScenarioConfig,
    config_bytes: &[u8],
    out: &Path,
    options: RunOptions,
) -> Result<RunSummary, RunError> {
    let geometry = config.geometry().expect("validated configs always build a geometry");
    let mut dir = OutputDir::new(out);
    let mut tracker = Tracker::new(config.tracker_config())?;
    let mut n_detections = 0;

    for f in 0..config.frames.count {
        let scene = config.frame_scene(f, geometry.clone());
        let snap = synthesize(&scene).map_err(|source| RunError::Scene { frame: f, source })?;
        if options.save_snapshots {
            dir.write_json(
                format!("snapshots/frame_{f:04}.json"),
                &SnapshotFile::new(&geometry, &snap),
            )?;
        }
        let time = config.frame_time(f);
        let products = analyze_frame(config, &geometry, &snap, time, f)?;

        dir.write_skymap(&format!("skymaps/frame_{f:04}_classical"), &products.classical)?;
        for (name, stat) in [("cyclic", &products.cyclic), ("conjugate", &products.conjugate)] {
            let Some(stat) = stat else { continue };
            dir.write(
                format!("spectra/frame_{f:04}_{name}.csv"),
                formats::spectrum_to_csv(&stat.spectrum).as_bytes(),
            )?;
            for map in &stat.maps {
                let alpha = alpha_label(map.alpha.unwrap_or(0.0));
                dir.write_skymap(&format!("skymaps/frame_{f:04}_{name}_alpha_{alpha}"), map)?;
            }
        }
        dir.write_json(
            format!("peaks/frame_{f:04}.json"),
            &PeakFile {
                frame: f,
                time,
                classical: &products.classical_peaks,
                detections: &products.detections,
            },
        )?;

        n_detections += products.detections.len();
        tracker.update(time, &products.detections)?;
        dir.write_json(
            format!("tracks/frame_{f:04}.json"),
            &TrackLog::from_tracker(f, time, &tracker),
        )?;
    }

    let tracks = tracker.tracks().to_vec();
    let mut planned = None;
    if let Some(sc) = &config.schedule {
        let (sched, mask) = plan(sc, &tracks, config.schedule_t0())?;
        dir.write_json("schedule.json", &sched)?;
        dir.write("flagmask.csv", mask.to_csv().as_bytes())?;
        planned = Some(sched);
    }

    let created_unix_s = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let manifest = Manifest {
        tool: "cyclosky",
        version: env!("CARGO_PKG_VERSION"),
        schema: SCHEMA,
        config_sha256: sha256_hex(config_bytes),
        seed: config.seed,
        frames: config.frames.count,
        created_unix_s,
        files: dir
            .files
            .iter()
            .zip(&dir.hashes)
            .map(|(p, h)| ManifestEntry {
                path: p.to_string_lossy().into_owned(),
                sha256: h.clone(),
            })
            .collect(),
    };
    dir.write_json("manifest.json", &manifest)?;

    Ok(RunSummary {
        files: dir.files,
        detections: n_detections,
        tracks,
        schedule: planned,
    })
}

/// Fixed direction helper for building scenarios in code.
pub fn fixed(l: f64, m: f64) -> crate::arraysim::TrajectorySpec {
    crate::arraysim::TrajectorySpec::fixed(DirectionLM { l, m })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": "cyclosky-scenario/1",
        "seed": 5,
        "scene": {
            "array": {"reference_freq_hz": 1.4e9, "n_antennas": 8},
            "sample_rate_hz": 1e6,
            "n_samples": 256,
            "sources": [
                {"kind": "bpsk", "snr_db": 10, "baud_rate_hz": 125000, "carrier_offset_hz": 62500,
                 "trajectory": {"kind": "fixed", "start": {"l": 0.3, "m": 0.2}}}
            ]
        },
        "frames": {"count": 2},
        "imaging": {"grid": {"l_min": -1, "l_max": 1, "m_min": -1, "m_max": 1, "n_l": 32, "n_m": 32}}
    }"#;

    fn edit(f: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut v: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
        f(&mut v);
        v.to_string()
    }

    fn key_of(text: &str) -> String {
        ScenarioConfig::from_json(text).unwrap_err().key().unwrap().to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ScenarioConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.frames.count, 2);
        assert_eq!(c.frame_interval(), 256e-6);
        assert_eq!(c.tracker_config().alpha_tol, 1e6 / 256.0);
        assert_eq!(c.alpha_grid(false).len(), 128);
        assert_eq!(c.alpha_grid(true).len(), 256);
        assert_eq!(c.geometry().unwrap().n_antennas(), 8);
        assert!(c.schedule.is_none());
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(key_of(&edit(|v| v["scene"]["n_samples"] = 0.into())), "scene.n_samples");
        assert_eq!(key_of(&edit(|v| v["scene"]["typo"] = 1.into())), "scene.typo");
        assert_eq!(key_of(&edit(|v| v["schema"] = "v0".into())), "schema");
        assert_eq!(
            key_of(&edit(|v| v["scene"]["sources"][0]["baud_rate_hz"] = 9e6.into())),
            "scene.sources[0]"
        );
        assert_eq!(
            key_of(&edit(
                |v| v["scene"]["sources"][0]["trajectory"]["start"]["l"] = "x".into()
            )),
            "scene.sources[0].trajectory"
        );
        assert_eq!(key_of(&edit(|v| v["frames"]["count"] = 0.into())), "frames.count");
        assert_eq!(
            key_of(&edit(|v| v["imaging"]["grid"]["n_l"] = 1.into())),
            "imaging.grid"
        );
        assert_eq!(
            key_of(&edit(|v| v["scene"]["system_noise_power"] = 0.into())),
            "scene.system_noise_power"
        );
        assert_eq!(
            key_of(&edit(
                |v| v["scene"]["array"]["positions"] = serde_json::json!([[0, 0], [1, 0]])
            )),
            "scene.array"
        );
    }

    #[test]
    fn moving_source_leaving_sky_is_rejected() {
        let text = edit(|v| {
            v["scene"]["sources"][0]["trajectory"] = serde_json::json!({
                "kind": "linear_lm", "start": {"l": 0.99, "m": 0.0}, "rate": [100.0, 0.0]
            })
        });
        assert_eq!(key_of(&text), "scene.sources[0].trajectory");
    }

    #[test]
    fn run_writes_expected_files_and_is_deterministic() {
        let config = ScenarioConfig::from_json(MINIMAL).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = run(&config, MINIMAL.as_bytes(), a.path(), RunOptions::default()).unwrap();
        let sb = run(
            &config,
            MINIMAL.as_bytes(),
            b.path(),
            RunOptions { save_snapshots: true },
        )
        .unwrap();
        for f in &sa.files {
            if f.as_os_str() == "manifest.json" {
                continue;
            }
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f:?}"
            );
        }
        for must in [
            "skymaps/frame_0000_classical.pgm",
            "spectra/frame_0001_conjugate.csv",
            "tracks/frame_0001.json",
            "manifest.json",
        ] {
            assert!(sa.files.iter().any(|f| f.as_os_str() == must), "{must}");
        }
        assert!(sb.files.iter().any(|f| f.as_os_str() == "snapshots/frame_0001.json"));
        // The strong BPSK is detected in both frames at α = 2 x offset.
        assert!(sa
            .tracks
            .iter()
            .any(|t| t.conjugate && t.alpha == 125000.0 && t.history.len() == 2));
    }
}
