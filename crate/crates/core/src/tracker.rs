//! Multi-frame RFI tracking, motion classification and position prediction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arraysim::DirectionLM;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("detection {index} has time {got}, frame time is {frame}")]
    MixedFrameTime { index: usize, got: f64, frame: f64 },
    #[error("frame time {got} does not follow previous frame time {previous}")]
    NonIncreasingTime { got: f64, previous: f64 },
    #[error("detection {index} has invalid power {power}")]
    BadPower { index: usize, power: f64 },
    #[error("invalid tracker config: {0}")]
    BadConfig(&'static str),
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum PredictError {
    #[error("track has too few points to be classified")]
    Unclassified,
    #[error("source sets below the horizon at t = {crossing_time} s")]
    BelowHorizon { crossing_time: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub time: f64,
    pub alpha: f64,
    pub conjugate: bool,
    pub direction: DirectionLM,
    pub power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackPoint {
    pub time: f64,
    pub direction: DirectionLM,
    pub power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionClass {
    Stationary,
    Slow,
    Fast,
    Unclassified,
}

impl MotionClass {
    /// Stationary below `s_stat`, Fast above `s_fast`, Slow in between
    /// (both thresholds inclusive).
    pub fn from_speed(speed: f64, config: &TrackerConfig) -> MotionClass {
        if speed < config.s_stat {
            MotionClass::Stationary
        } else if speed > config.s_fast {
            MotionClass::Fast
        } else {
            MotionClass::Slow
        }
    }
}

/// Least-squares linear motion `l(t) = l0 + dl_dt (t - t_ref)`, likewise for `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionModel {
    pub t_ref: f64,
    pub l0: f64,
    pub m0: f64,
    pub dl_dt: f64,
    pub dm_dt: f64,
    /// RMS of the 2-D fit residuals.
    pub residual_rms: f64,
}

impl MotionModel {
    pub fn fit(history: &[TrackPoint]) -> Option<MotionModel> {
        if history.len() < 2 {
            return None;
        }
        let n = history.len() as f64;
        let t_ref = history.iter().map(|p| p.time).sum::<f64>() / n;
        let l_mean = history.iter().map(|p| p.direction.l).sum::<f64>() / n;
        let m_mean = history.iter().map(|p| p.direction.m).sum::<f64>() / n;
        let (mut stt, mut stl, mut stm) = (0.0, 0.0, 0.0);
        for p in history {
            let dt = p.time - t_ref;
            stt += dt * dt;
            stl += dt * (p.direction.l - l_mean);
            stm += dt * (p.direction.m - m_mean);
        }
        if !(stt > 0.0) {
            return None;
        }
        let dl_dt = stl / stt;
        let dm_dt = stm / stt;
        let sq: f64 = history
            .iter()
            .map(|p| {
                let dt = p.time - t_ref;
                let rl = p.direction.l - (l_mean + dl_dt * dt);
                let rm = p.direction.m - (m_mean + dm_dt * dt);
                rl * rl + rm * rm
            })
            .sum();
        Some(MotionModel {
            t_ref,
            l0: l_mean,
            m0: m_mean,
            dl_dt,
            dm_dt,
            residual_rms: (sq / n).sqrt(),
        })
    }

    pub fn speed(&self) -> f64 {
        self.dl_dt.hypot(self.dm_dt)
    }

    pub fn position(&self, t: f64) -> (f64, f64) {
        let dt = t - self.t_ref;
        (self.l0 + self.dl_dt * dt, self.m0 + self.dm_dt * dt)
    }

    /// First time after `t_ref` at which the fitted path leaves the unit disk.
    fn crossing_time(&self) -> Option<f64> {
        let (a, b, c) = (
            self.dl_dt * self.dl_dt + self.dm_dt * self.dm_dt,
            2.0 * (self.l0 * self.dl_dt + self.m0 * self.dm_dt),
            self.l0 * self.l0 + self.m0 * self.m0 - 1.0,
        );
        if c >= 0.0 {
            return Some(self.t_ref);
        }
        if a == 0.0 {
            return None;
        }
        let disc = b * b - 4.0 * a * c;
        Some(self.t_ref + (-b + disc.sqrt()) / (2.0 * a))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Speeds below this are Stationary (direction cosines per second).
    pub s_stat: f64,
    /// Speeds above this are Fast.
    pub s_fast: f64,
    /// Gate radius as a multiple of the prediction uncertainty.
    pub gate_sigma: f64,
    pub gate_min: f64,
    /// Largest cyclic-frequency mismatch for association (Hz).
    pub alpha_tol: f64,
    /// Frames a track may go unmatched before it is retired.
    pub drop_after: u32,
    pub min_points: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            s_stat: 1e-5,
            s_fast: 5e-3,
            gate_sigma: 3.0,
            gate_min: 0.01,
            alpha_tol: 0.0,
            drop_after: 5,
            min_points: 5,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        if !(self.s_stat >= 0.0 && self.s_fast.is_finite() && self.s_stat <= self.s_fast) {
            return Err(TrackerError::BadConfig("need 0 <= s_stat <= s_fast"));
        }
        if !(self.gate_sigma >= 0.0 && self.gate_sigma.is_finite()) {
            return Err(TrackerError::BadConfig("gate_sigma must be finite and >= 0"));
        }
        if !(self.gate_min > 0.0 && self.gate_min.is_finite()) {
            return Err(TrackerError::BadConfig("gate_min must be positive"));
        }
        if !(self.alpha_tol >= 0.0 && self.alpha_tol.is_finite()) {
            return Err(TrackerError::BadConfig("alpha_tol must be finite and >= 0"));
        }
        if self.min_points < 2 {
            return Err(TrackerError::BadConfig("min_points must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub direction: DirectionLM,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfiTrack {
    pub id: u64,
    pub alpha: f64,
    pub conjugate: bool,
    pub history: Vec<TrackPoint>,
    pub class: MotionClass,
    pub model: Option<MotionModel>,
    /// Consecutive frames without a matching detection.
    pub misses: u32,
}

impl RfiTrack {
    pub fn new(id: u64, det: &Detection) -> RfiTrack {
        RfiTrack {
            id,
            alpha: det.alpha,
            conjugate: det.conjugate,
            history: vec![TrackPoint {
                time: det.time,
                direction: det.direction,
                power: det.power,
            }],
            class: MotionClass::Unclassified,
            model: None,
            misses: 0,
        }
    }

    pub fn last(&self) -> &TrackPoint {
        self.history.last().expect("tracks are never empty")
    }

    pub fn span(&self) -> f64 {
        self.last().time - self.history[0].time
    }

    /// Refits the motion model and reclassifies from the current history.
    pub fn refresh(&mut self, config: &TrackerConfig) {
        self.model = MotionModel::fit(&self.history);
        self.class = classify(self, config);
    }

    pub fn predict(&self, t: f64) -> Result<Prediction, PredictError> {
        predict(self, t)
    }
}

pub fn classify(track: &RfiTrack, config: &TrackerConfig) -> MotionClass {
    if track.history.len() < config.min_points {
        return MotionClass::Unclassified;
    }
    match MotionModel::fit(&track.history) {
        Some(model) => MotionClass::from_speed(model.speed(), config),
        None => MotionClass::Unclassified,
    }
}

/// Position at time `t` with an uncertainty radius.
pub fn predict(track: &RfiTrack, t: f64) -> Result<Prediction, PredictError> {
    let model = match (track.class, track.model) {
        (MotionClass::Unclassified, _) | (_, None) => return Err(PredictError::Unclassified),
        (_, Some(model)) => model,
    };
    if track.class == MotionClass::Stationary {
        return Ok(Prediction {
            direction: DirectionLM {
                l: model.l0,
                m: model.m0,
            },
            radius: model.residual_rms,
        });
    }
    let (l, m) = model.position(t);
    if l * l + m * m > 1.0 {
        let crossing_time = model.crossing_time().unwrap_or(t);
        return Err(PredictError::BelowHorizon { crossing_time });
    }
    let horizon = (t - track.last().time).max(0.0);
    let span = track.span();
    let growth = if span > 0.0 { 1.0 + horizon / span } else { 1.0 };
    Ok(Prediction {
        direction: DirectionLM { l, m },
        radius: (model.residual_rms * growth).min(2.0),
    })
}

/// Stateful tracker; one `update` per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracker {
    config: TrackerConfig,
    active: Vec<RfiTrack>,
    retired: Vec<RfiTrack>,
    next_id: u64,
    last_time: Option<f64>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Tracker, TrackerError> {
        config.validate()?;
        Ok(Tracker {
            config,
            active: Vec::new(),
            retired: Vec::new(),
            next_id: 0,
            last_time: None,
        })
    }

    /// Resumes from previously exported tracks.
    pub fn from_tracks(config: TrackerConfig, tracks: Vec<RfiTrack>) -> Result<Tracker, TrackerError> {
        let mut tracker = Tracker::new(config)?;
        tracker.next_id = tracks.iter().map(|t| t.id + 1).max().unwrap_or(0);
        tracker.last_time = tracks
            .iter()
            .map(|t| t.last().time)
            .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))));
        tracker.active = tracks;
        Ok(tracker)
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn tracks(&self) -> &[RfiTrack] {
        &self.active
    }

    pub fn retired(&self) -> &[RfiTrack] {
        &self.retired
    }

    /// Active and retired tracks ordered by id.
    pub fn all_tracks(&self) -> Vec<RfiTrack> {
        let mut all: Vec<RfiTrack> = self.active.iter().chain(&self.retired).cloned().collect();
        all.sort_by_key(|t| t.id);
        all
    }

    fn gate_centre(&self, track: &RfiTrack, t: f64) -> (DirectionLM, f64) {
        if track.history.len() >= self.config.min_points {
            if let Ok(p) = predict(track, t) {
                return (p.direction, p.radius);
            }
        }
        // Short tracks gate around the last point, widened by their typical step.
        let steps = &track.history;
        let uncertainty = if steps.len() >= 2 {
            let sq: f64 = steps
                .windows(2)
                .map(|w| w[0].direction.distance(&w[1].direction).powi(2))
                .sum();
            (sq / (steps.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        (track.last().direction, uncertainty)
    }

    /// Associates one frame of detections taken at `time`.
    pub fn update(&mut self, time: f64, detections: &[Detection]) -> Result<(), TrackerError> {
        for (index, d) in detections.iter().enumerate() {
            if d.time != time {
                return Err(TrackerError::MixedFrameTime {
                    index,
                    got: d.time,
                    frame: time,
                });
            }
            if !(d.power >= 0.0 && d.power.is_finite()) {
                return Err(TrackerError::BadPower { index, power: d.power });
            }
        }
        if let Some(previous) = self.last_time {
            if !(time > previous) {
                return Err(TrackerError::NonIncreasingTime { got: time, previous });
            }
        }
        self.last_time = Some(time);

        let mut pairs = Vec::new();
        for (ti, track) in self.active.iter().enumerate() {
            let (centre, uncertainty) = self.gate_centre(track, time);
            let gate = self.config.gate_min.max(self.config.gate_sigma * uncertainty);
            for (di, d) in detections.iter().enumerate() {
                if d.conjugate != track.conjugate || (d.alpha - track.alpha).abs() > self.config.alpha_tol {
                    continue;
                }
                let dist = centre.distance(&d.direction);
                if dist <= gate {
                    pairs.push((dist, track.id, di, ti));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut track_used = vec![false; self.active.len()];
        let mut det_used = vec![false; detections.len()];
        for (_, _, di, ti) in pairs {
            if track_used[ti] || det_used[di] {
                continue;
            }
            track_used[ti] = true;
            det_used[di] = true;
            let d = &detections[di];
            let track = &mut self.active[ti];
            track.history.push(TrackPoint {
                time,
                direction: d.direction,
                power: d.power,
            });
            track.misses = 0;
            track.refresh(&self.config);
        }

        let mut kept = Vec::with_capacity(self.active.len());
        for (ti, mut track) in std::mem::take(&mut self.active).into_iter().enumerate() {
            if !track_used[ti] {
                track.misses += 1;
            }
            if track.misses > self.config.drop_after {
                self.retired.push(track);
            } else {
                kept.push(track);
            }
        }
        self.active = kept;

        for (di, d) in detections.iter().enumerate() {
            if !det_used[di] {
                let mut track = RfiTrack::new(self.next_id, d);
                track.refresh(&self.config);
                self.active.push(track);
                self.next_id += 1;
            }
        }
        Ok(())
    }
}

/// Per-frame track log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub id: u64,
    pub alpha: f64,
    pub conjugate: bool,
    pub class: MotionClass,
    /// Latest observed position.
    pub position: DirectionLM,
    pub model: Option<MotionModel>,
    /// Prediction radius at the frame time, when the track is classified
    /// and above the horizon.
    pub uncertainty: Option<f64>,
    pub misses: u32,
    pub history: Vec<TrackPoint>,
}

impl TrackRecord {
    pub fn from_track(track: &RfiTrack, time: f64) -> TrackRecord {
        TrackRecord {
            id: track.id,
            alpha: track.alpha,
            conjugate: track.conjugate,
            class: track.class,
            position: track.last().direction,
            model: track.model,
            uncertainty: predict(track, time).ok().map(|p| p.radius),
            misses: track.misses,
            history: track.history.clone(),
        }
    }

    pub fn to_track(&self) -> RfiTrack {
        RfiTrack {
            id: self.id,
            alpha: self.alpha,
            conjugate: self.conjugate,
            history: self.history.clone(),
            class: self.class,
            model: self.model,
            misses: self.misses,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackLog {
    pub frame: usize,
    pub time: f64,
    pub tracks: Vec<TrackRecord>,
}

impl TrackLog {
    pub fn from_tracker(frame: usize, time: f64, tracker: &Tracker) -> TrackLog {
        TrackLog {
            frame,
            time,
            tracks: tracker
                .tracks()
                .iter()
                .map(|t| TrackRecord::from_track(t, time))
                .collect(),
        }
    }

    pub fn tracks(&self) -> Vec<RfiTrack> {
        self.tracks.iter().map(TrackRecord::to_track).collect()
    }
}
