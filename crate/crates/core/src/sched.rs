//! RFI-aware observation scheduling and time-frequency flag masks.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arraysim::DirectionLM;
use crate::tracker::{predict, MotionClass, RfiTrack};

/// Earth rotation rate relative to the stars (rad/s).
pub const SIDEREAL_RATE: f64 = 7.292_115_0e-5;

pub const EXACT_MAX_SLOTS: usize = 12;
pub const EXACT_MAX_PROGRAMS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedError {
    #[error("program {id}: {reason}")]
    BadProgram { id: u64, reason: &'static str },
    #[error("duplicate program id {0}")]
    DuplicateProgram(u64),
    #[error("invalid site: {0}")]
    BadSite(&'static str),
    #[error("invalid planning parameter: {0}")]
    BadParam(&'static str),
    #[error("exact mode supports at most {EXACT_MAX_SLOTS} slots and {EXACT_MAX_PROGRAMS} programs (got {slots} slots, {programs} programs)")]
    ExactTooLarge { slots: usize, programs: usize },
    #[error("risk table does not match {programs} programs x {slots} slots")]
    TableShape { programs: usize, slots: usize },
    #[error("invalid channelization: {0}")]
    BadChannels(&'static str),
    #[error("mask parse error on line {line}: {reason}")]
    MaskParse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub ra: f64,
    pub dec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Program {
    pub id: u64,
    pub target: Target,
    /// `[f_lo, f_hi]` in Hz.
    pub freq_span: [f64; 2],
    /// Length in slots.
    pub duration: usize,
    pub priority: f64,
}

impl Program {
    pub fn validate(&self) -> Result<(), SchedError> {
        let bad = |reason| Err(SchedError::BadProgram { id: self.id, reason });
        let [lo, hi] = self.freq_span;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad("freq_span must satisfy f_lo < f_hi");
        }
        if self.duration == 0 {
            return bad("duration must be at least 1 slot");
        }
        if !(self.priority > 0.0 && self.priority.is_finite()) {
            return bad("priority must be positive");
        }
        if !(self.target.ra.is_finite() && self.target.dec.abs() <= std::f64::consts::FRAC_PI_2) {
            return bad("target needs finite ra and |dec| <= pi/2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteModel {
    /// Geodetic latitude (rad).
    pub latitude: f64,
    /// Slot length (s).
    pub slot_length: f64,
    /// Local sidereal time at slot 0 (rad).
    pub lst0: f64,
}

impl SiteModel {
    pub fn validate(&self) -> Result<(), SchedError> {
        if !(self.latitude.abs() <= std::f64::consts::FRAC_PI_2) {
            return Err(SchedError::BadSite("|latitude| must be <= pi/2"));
        }
        if !(self.slot_length > 0.0 && self.slot_length.is_finite()) {
            return Err(SchedError::BadSite("slot_length must be positive"));
        }
        if !self.lst0.is_finite() {
            return Err(SchedError::BadSite("lst0 must be finite"));
        }
        Ok(())
    }
}

/// Topocentric direction of a target at the start of `slot`, or `None` when
/// it is below the horizon.
pub fn target_position(target: Target, site: &SiteModel, slot: usize) -> Option<DirectionLM> {
    let h = site.lst0 + slot as f64 * site.slot_length * SIDEREAL_RATE - target.ra;
    let (sin_d, cos_d) = target.dec.sin_cos();
    let (sin_p, cos_p) = site.latitude.sin_cos();
    let (sin_h, cos_h) = h.sin_cos();
    let up = sin_d * sin_p + cos_d * cos_h * cos_p;
    if up < 0.0 {
        return None;
    }
    let mut l = -cos_d * sin_h;
    let mut m = sin_d * cos_p - cos_d * cos_h * sin_p;
    let r = l.hypot(m);
    if r > 1.0 {
        l /= r;
        m /= r;
    }
    Some(DirectionLM { l, m })
}

/// Frequency band attributed to tracks with a given cyclic signature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandRule {
    pub alpha: f64,
    #[serde(default)]
    pub alpha_tol: f64,
    /// `[f_lo, f_hi]` in Hz.
    pub band: [f64; 2],
}

/// Band lookup; tracks without a matching rule occupy the full band.
pub fn track_band(rules: &[BandRule], alpha: f64) -> [f64; 2] {
    rules
        .iter()
        .find(|r| (r.alpha - alpha).abs() <= r.alpha_tol)
        .map(|r| r.band)
        .unwrap_or([f64::NEG_INFINITY, f64::INFINITY])
}

fn bands_overlap(a: [f64; 2], b: [f64; 2]) -> bool {
    a[0] < b[1] && b[0] < a[1]
}

/// Predicted RFI position at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfiPrediction {
    pub direction: DirectionLM,
    pub radius: f64,
    pub band: [f64; 2],
}

/// Risk contributed by one predicted source.
pub fn track_risk(pointing: DirectionLM, freq_span: [f64; 2], rfi: &RfiPrediction, exclusion_radius: f64) -> f64 {
    if !bands_overlap(freq_span, rfi.band) {
        return 0.0;
    }
    let e = pointing.distance(&rfi.direction) - rfi.radius;
    if e < exclusion_radius {
        1.0
    } else {
        (-(e * e) / (2.0 * exclusion_radius * exclusion_radius)).exp()
    }
}

/// `1 - prod(1 - r_i)` over all predicted sources.
pub fn corruption_risk(
    pointing: DirectionLM,
    freq_span: [f64; 2],
    rfi: &[RfiPrediction],
    exclusion_radius: f64,
) -> f64 {
    let clear: f64 = rfi
        .iter()
        .map(|p| 1.0 - track_risk(pointing, freq_span, p, exclusion_radius))
        .product();
    (1.0 - clear).clamp(0.0, 1.0)
}

/// Predictions at the start of every slot for tracks of the given classes;
/// slot `k` starts at `t0 + k * slot_length`.
pub fn slot_predictions(
    tracks: &[RfiTrack],
    classes: &[MotionClass],
    site: &SiteModel,
    horizon: usize,
    t0: f64,
    bands: &[BandRule],
) -> Vec<Vec<RfiPrediction>> {
    (0..horizon)
        .map(|slot| {
            let t = t0 + slot as f64 * site.slot_length;
            tracks
                .iter()
                .filter(|tr| classes.contains(&tr.class))
                .filter_map(|tr| {
                    predict(tr, t).ok().map(|p| RfiPrediction {
                        direction: p.direction,
                        radius: p.radius,
                        band: track_band(bands, tr.alpha),
                    })
                })
                .collect()
        })
        .collect()
}

/// Per-(program, slot) pointing and risk.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskTable {
    pub horizon: usize,
    /// `pointing[p][slot]`, `None` below the horizon.
    pub pointing: Vec<Vec<Option<DirectionLM>>>,
    pub risk: Vec<Vec<f64>>,
}

impl RiskTable {
    pub fn build(
        programs: &[Program],
        site: &SiteModel,
        horizon: usize,
        rfi: &[Vec<RfiPrediction>],
        exclusion_radius: f64,
    ) -> RiskTable {
        let mut pointing = Vec::with_capacity(programs.len());
        let mut risk = Vec::with_capacity(programs.len());
        for p in programs {
            let pts: Vec<_> = (0..horizon).map(|s| target_position(p.target, site, s)).collect();
            let rs = pts
                .iter()
                .enumerate()
                .map(|(s, d)| match d {
                    Some(d) => corruption_risk(*d, p.freq_span, rfi.get(s).map_or(&[][..], |v| v), exclusion_radius),
                    None => 1.0,
                })
                .collect();
            pointing.push(pts);
            risk.push(rs);
        }
        RiskTable {
            horizon,
            pointing,
            risk,
        }
    }

    pub fn visible(&self, program: usize, slot: usize) -> bool {
        self.pointing[program][slot].is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Greedy,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanParams {
    pub mode: Mode,
    /// Weight of priority against risk in the objective.
    pub lambda: f64,
    /// Windows with any slot above this risk are infeasible.
    pub risk_cap: f64,
    /// Exclusion radius in direction cosines.
    pub exclusion_radius: f64,
}

impl Default for PlanParams {
    fn default() -> Self {
        PlanParams {
            mode: Mode::Greedy,
            lambda: 1.0,
            risk_cap: 0.5,
            exclusion_radius: 0.1,
        }
    }
}

impl PlanParams {
    pub fn validate(&self) -> Result<(), SchedError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(SchedError::BadParam("lambda must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.risk_cap) {
            return Err(SchedError::BadParam("risk_cap must lie in [0, 1]"));
        }
        if !(self.exclusion_radius > 0.0 && self.exclusion_radius.is_finite()) {
            return Err(SchedError::BadParam("exclusion_radius must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotAssignment {
    pub slot: usize,
    pub program: Option<u64>,
    pub pointing: Option<DirectionLM>,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub slots: Vec<SlotAssignment>,
    pub total_risk: f64,
    pub objective: f64,
    pub unscheduled: Vec<u64>,
    pub diagnostics: Vec<String>,
}

impl Schedule {
    pub fn program_at(&self, slot: usize) -> Option<u64> {
        self.slots.get(slot).and_then(|s| s.program)
    }

    /// First slot of each scheduled program.
    pub fn start_of(&self, id: u64) -> Option<usize> {
        self.slots.iter().position(|s| s.program == Some(id))
    }
}

/// Objective of an assignment: slot risks summed in slot order minus
/// `lambda` times the scheduled priorities summed in program order.
pub fn objective(programs: &[Program], table: &RiskTable, lambda: f64, starts: &[Option<usize>]) -> (f64, f64) {
    let mut slot_risk = vec![0.0; table.horizon];
    for (p, start) in starts.iter().enumerate() {
        if let Some(s) = *start {
            let end = s + programs[p].duration;
            slot_risk[s..end].copy_from_slice(&table.risk[p][s..end]);
        }
    }
    let total: f64 = slot_risk.iter().sum();
    let priority: f64 = programs
        .iter()
        .zip(starts)
        .filter(|(_, s)| s.is_some())
        .map(|(p, _)| p.priority)
        .sum();
    (total, total - lambda * priority)
}

fn window_ok(table: &RiskTable, p: usize, start: usize, duration: usize, cap: f64) -> bool {
    (start..start + duration).all(|k| table.visible(p, k) && table.risk[p][k] <= cap)
}

fn window_risk(table: &RiskTable, p: usize, start: usize, duration: usize) -> f64 {
    table.risk[p][start..start + duration].iter().sum()
}

/// Program indices by descending priority, then ascending id.
fn priority_order(programs: &[Program]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..programs.len()).collect();
    order.sort_by(|&a, &b| {
        programs[b]
            .priority
            .total_cmp(&programs[a].priority)
            .then(programs[a].id.cmp(&programs[b].id))
    });
    order
}

fn greedy(programs: &[Program], table: &RiskTable, params: &PlanParams) -> Vec<Option<usize>> {
    let h = table.horizon;
    let mut used = vec![false; h];
    let mut starts = vec![None; programs.len()];
    for p in priority_order(programs) {
        let d = programs[p].duration;
        if d > h {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for s in 0..=h - d {
            if used[s..s + d].iter().any(|&u| u) || !window_ok(table, p, s, d, params.risk_cap) {
                continue;
            }
            let r = window_risk(table, p, s, d);
            if best.is_none_or(|(br, _)| r < br) {
                best = Some((r, s));
            }
        }
        if let Some((r, s)) = best {
            if r - params.lambda * programs[p].priority <= 0.0 {
                used[s..s + d].iter_mut().for_each(|u| *u = true);
                starts[p] = Some(s);
            }
        }
    }
    starts
}

struct ExactSearch<'a> {
    programs: &'a [Program],
    table: &'a RiskTable,
    params: &'a PlanParams,
    order: Vec<usize>,
    starts: Vec<Option<usize>>,
    used: Vec<bool>,
    best: Option<(f64, Vec<usize>, Vec<Option<usize>>)>,
}

impl ExactSearch<'_> {
    fn key(&self) -> Vec<usize> {
        self.order
            .iter()
            .map(|&p| self.starts[p].unwrap_or(self.table.horizon))
            .collect()
    }

    fn visit(&mut self, depth: usize) {
        if depth == self.order.len() {
            let (_, obj) = objective(self.programs, self.table, self.params.lambda, &self.starts);
            let key = self.key();
            let better = match &self.best {
                None => true,
                Some((bo, bk, _)) => obj < *bo || (obj == *bo && key < *bk),
            };
            if better {
                self.best = Some((obj, key, self.starts.clone()));
            }
            return;
        }
        let p = self.order[depth];
        let d = self.programs[p].duration;
        let h = self.table.horizon;
        if d <= h {
            for s in 0..=h - d {
                if self.used[s..s + d].iter().any(|&u| u) || !window_ok(self.table, p, s, d, self.params.risk_cap) {
                    continue;
                }
                self.used[s..s + d].iter_mut().for_each(|u| *u = true);
                self.starts[p] = Some(s);
                self.visit(depth + 1);
                self.starts[p] = None;
                self.used[s..s + d].iter_mut().for_each(|u| *u = false);
            }
        }
        self.visit(depth + 1);
    }
}

fn exact(programs: &[Program], table: &RiskTable, params: &PlanParams) -> Vec<Option<usize>> {
    let mut search = ExactSearch {
        programs,
        table,
        params,
        order: priority_order(programs),
        starts: vec![None; programs.len()],
        used: vec![false; table.horizon],
        best: None,
    };
    search.visit(0);
    search.best.map(|b| b.2).unwrap_or_else(|| vec![None; programs.len()])
}

fn validate_programs(programs: &[Program]) -> Result<(), SchedError> {
    let mut ids = Vec::with_capacity(programs.len());
    for p in programs {
        p.validate()?;
        if ids.contains(&p.id) {
            return Err(SchedError::DuplicateProgram(p.id));
        }
        ids.push(p.id);
    }
    Ok(())
}

/// Schedules programs against a precomputed risk table.
pub fn schedule_table(programs: &[Program], table: &RiskTable, params: &PlanParams) -> Result<Schedule, SchedError> {
    validate_programs(programs)?;
    params.validate()?;
    if table.risk.len() != programs.len()
        || table.pointing.len() != programs.len()
        || table.risk.iter().any(|r| r.len() != table.horizon)
    {
        return Err(SchedError::TableShape {
            programs: programs.len(),
            slots: table.horizon,
        });
    }
    if params.mode == Mode::Exact && (table.horizon > EXACT_MAX_SLOTS || programs.len() > EXACT_MAX_PROGRAMS) {
        return Err(SchedError::ExactTooLarge {
            slots: table.horizon,
            programs: programs.len(),
        });
    }

    let mut diagnostics = Vec::new();
    if !programs.is_empty() && programs.iter().all(|p| p.duration > table.horizon) {
        diagnostics.push(format!(
            "horizon of {} slots is shorter than every program duration",
            table.horizon
        ));
    }
    let starts = match params.mode {
        Mode::Greedy => greedy(programs, table, params),
        Mode::Exact => exact(programs, table, params),
    };
    let (total_risk, obj) = objective(programs, table, params.lambda, &starts);

    let mut slots: Vec<SlotAssignment> = (0..table.horizon)
        .map(|slot| SlotAssignment {
            slot,
            program: None,
            pointing: None,
            risk: 0.0,
        })
        .collect();
    let mut unscheduled = Vec::new();
    for (p, start) in starts.iter().enumerate() {
        match *start {
            Some(s) => {
                for k in s..s + programs[p].duration {
                    slots[k].program = Some(programs[p].id);
                    slots[k].pointing = table.pointing[p][k];
                    slots[k].risk = table.risk[p][k];
                }
            }
            None => {
                unscheduled.push(programs[p].id);
                if programs[p].duration > table.horizon {
                    diagnostics.push(format!(
                        "program {} needs {} slots, horizon has {}",
                        programs[p].id, programs[p].duration, table.horizon
                    ));
                }
            }
        }
    }
    Ok(Schedule {
        slots,
        total_risk,
        objective: obj,
        unscheduled,
        diagnostics,
    })
}

/// Builds the risk table from Stationary and Slow tracks and schedules.
pub fn schedule(
    programs: &[Program],
    site: &SiteModel,
    horizon: usize,
    tracks: &[RfiTrack],
    t0: f64,
    bands: &[BandRule],
    params: &PlanParams,
) -> Result<Schedule, SchedError> {
    site.validate()?;
    params.validate()?;
    let rfi = slot_predictions(
        tracks,
        &[MotionClass::Stationary, MotionClass::Slow],
        site,
        horizon,
        t0,
        bands,
    );
    let table = RiskTable::build(programs, site, horizon, &rfi, params.exclusion_radius);
    schedule_table(programs, &table, params)
}

/// Regular channel grid: channel `c` covers `[f_start + c w, f_start + (c+1) w)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channelization {
    pub f_start: f64,
    pub width: f64,
    pub count: usize,
}

impl Channelization {
    pub fn validate(&self) -> Result<(), SchedError> {
        if !self.f_start.is_finite() {
            return Err(SchedError::BadChannels("f_start must be finite"));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(SchedError::BadChannels("width must be positive"));
        }
        if self.count == 0 {
            return Err(SchedError::BadChannels("count must be at least 1"));
        }
        Ok(())
    }

    pub fn channel_band(&self, c: usize) -> [f64; 2] {
        [
            self.f_start + c as f64 * self.width,
            self.f_start + (c + 1) as f64 * self.width,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlagMask {
    pub slot_length: f64,
    pub channels: Channelization,
    /// Row-major `[slot][channel]`.
    pub cells: Vec<bool>,
}

impl FlagMask {
    pub fn n_slots(&self) -> usize {
        self.cells.len() / self.channels.count
    }

    pub fn get(&self, slot: usize, channel: usize) -> bool {
        self.cells[slot * self.channels.count + channel]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// True when every flag in `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &FlagMask) -> bool {
        self.cells.len() == other.cells.len() && self.cells.iter().zip(&other.cells).all(|(&a, &b)| !a || b)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# slot_length_s={} channel_width_hz={} f_start_hz={}\n",
            self.slot_length, self.channels.width, self.channels.f_start
        );
        for row in self.cells.chunks(self.channels.count) {
            let line: Vec<&str> = row.iter().map(|&c| if c { "1" } else { "0" }).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<FlagMask, SchedError> {
        let err = |line: usize, reason: String| SchedError::MaskParse { line, reason };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let header = header
            .strip_prefix("# ")
            .ok_or_else(|| err(1, "missing header".into()))?;
        let (mut slot_length, mut width, mut f_start) = (None, None, None);
        for field in header.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| err(1, format!("bad header field {field:?}")))?;
            let v: f64 = v.parse().map_err(|_| err(1, format!("bad number in {field:?}")))?;
            match k {
                "slot_length_s" => slot_length = Some(v),
                "channel_width_hz" => width = Some(v),
                "f_start_hz" => f_start = Some(v),
                _ => return Err(err(1, format!("unknown header key {k:?}"))),
            }
        }
        let (Some(slot_length), Some(width), Some(f_start)) = (slot_length, width, f_start) else {
            return Err(err(
                1,
                "header needs slot_length_s, channel_width_hz, f_start_hz".into(),
            ));
        };
        let mut cells = Vec::new();
        let mut count = None;
        for (i, line) in lines.enumerate() {
            let row: Vec<bool> = line
                .split(',')
                .map(|c| match c {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    _ => Err(err(i + 2, format!("bad cell {c:?}"))),
                })
                .collect::<Result<_, _>>()?;
            if *count.get_or_insert(row.len()) != row.len() {
                return Err(err(i + 2, "ragged row".into()));
            }
            cells.extend(row);
        }
        let channels = Channelization {
            f_start,
            width,
            count: count.ok_or_else(|| err(2, "no rows".into()))?,
        };
        channels.validate()?;
        Ok(FlagMask {
            slot_length,
            channels,
            cells,
        })
    }
}

/// Flags (slot, channel) cells of scheduled slots where a Fast track is
/// predicted within the exclusion radius of the pointing, over the track's band.
pub fn flag_mask(
    tracks: &[RfiTrack],
    schedule: &Schedule,
    site: &SiteModel,
    t0: f64,
    exclusion_radius: f64,
    channels: &Channelization,
    bands: &[BandRule],
) -> Result<FlagMask, SchedError> {
    channels.validate()?;
    let n_slots = schedule.slots.len();
    let mut cells = vec![false; n_slots * channels.count];
    let fast: Vec<&RfiTrack> = tracks.iter().filter(|t| t.class == MotionClass::Fast).collect();
    for slot in &schedule.slots {
        let Some(pointing) = slot.pointing else { continue };
        let t = t0 + slot.slot as f64 * site.slot_length;
        for track in &fast {
            let Ok(p) = predict(track, t) else { continue };
            if pointing.distance(&p.direction) - p.radius >= exclusion_radius {
                continue;
            }
            let band = track_band(bands, track.alpha);
            for c in 0..channels.count {
                if bands_overlap(channels.channel_band(c), band) {
                    cells[slot.slot * channels.count + c] = true;
                }
            }
        }
    }
    Ok(FlagMask {
        slot_length: site.slot_length,
        channels: *channels,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracker::{MotionModel, TrackPoint};
    use std::f64::consts::{FRAC_PI_4, PI};

    fn site() -> SiteModel {
        SiteModel {
            latitude: -0.5,
            slot_length: 60.0,
            lst0: 1.0,
        }
    }

    fn program(id: u64, duration: usize, priority: f64) -> Program {
        // Transits at lst0 near the zenith of site().
        Program {
            id,
            target: Target { ra: 1.0, dec: -0.5 },
            freq_span: [1.0e9, 1.1e9],
            duration,
            priority,
        }
    }

    /// Track with an exact linear model, classified from `speed`.
    fn track(id: u64, class: MotionClass, l0: f64, m0: f64, rate: [f64; 2]) -> RfiTrack {
        let history: Vec<_> = (0..5)
            .map(|k| TrackPoint {
                time: k as f64 - 4.0,
                direction: DirectionLM::new(l0 + rate[0] * (k as f64 - 4.0), m0 + rate[1] * (k as f64 - 4.0)).unwrap(),
                power: 1.0,
            })
            .collect();
        let model = MotionModel::fit(&history);
        RfiTrack {
            id,
            alpha: 1.0,
            conjugate: true,
            history,
            class,
            model,
            misses: 0,
        }
    }

    #[test]
    fn zenith_at_culmination() {
        let s = SiteModel {
            latitude: 0.7,
            slot_length: 1.0,
            lst0: 2.0,
        };
        let d = target_position(Target { ra: 2.0, dec: 0.7 }, &s, 0).unwrap();
        assert!(d.l.abs() < 1e-15 && d.m.abs() < 1e-15);
    }

    #[test]
    fn opposite_declination_sits_on_horizon() {
        let s = SiteModel {
            latitude: FRAC_PI_4,
            slot_length: 1.0,
            lst0: 0.0,
        };
        match target_position(
            Target {
                ra: 0.0,
                dec: -FRAC_PI_4,
            },
            &s,
            0,
        ) {
            None => {}
            Some(d) => assert!(d.l.abs() < 1e-12 && (d.m + 1.0).abs() < 1e-12, "{d:?}"),
        }
        assert!(target_position(
            Target {
                ra: 0.0,
                dec: -FRAC_PI_4 - 0.01
            },
            &s,
            0
        )
        .is_none());
    }

    #[test]
    fn sidereal_day_periodicity() {
        let day = 2.0 * PI / SIDEREAL_RATE;
        let s = SiteModel {
            latitude: -0.4,
            slot_length: day / 24.0,
            lst0: 0.3,
        };
        let target = Target { ra: 0.1, dec: -0.2 };
        for slot in 0..24 {
            match (
                target_position(target, &s, slot),
                target_position(target, &s, slot + 24),
            ) {
                (Some(a), Some(b)) => assert!(a.distance(&b) < 1e-9),
                (None, None) => {}
                other => panic!("slot {slot}: {other:?}"),
            }
        }
    }

    #[test]
    fn risk_examples() {
        let p = DirectionLM::new(0.1, 0.2).unwrap();
        let band = [1e9, 2e9];
        assert_eq!(corruption_risk(p, band, &[], 0.05), 0.0);
        let at = RfiPrediction {
            direction: p,
            radius: 0.0,
            band: [f64::NEG_INFINITY, f64::INFINITY],
        };
        assert_eq!(corruption_risk(p, band, &[at], 0.05), 1.0);
        let far = RfiPrediction {
            direction: DirectionLM::new(0.25, 0.2).unwrap(),
            ..at
        };
        let r = corruption_risk(p, band, &[far], 0.05);
        assert!((r - (-4.5f64).exp()).abs() < 1e-12, "{r}");
        let disjoint = RfiPrediction { band: [2e9, 3e9], ..at };
        assert_eq!(corruption_risk(p, band, &[disjoint], 0.05), 0.0);
    }

    #[test]
    fn risk_monotone_in_separation_and_uncertainty() {
        let p = DirectionLM::ZENITH;
        let band = [0.0, 1.0];
        let mut last = 1.0;
        for k in 0..100 {
            let rfi = RfiPrediction {
                direction: DirectionLM::new(0.005 * k as f64, 0.0).unwrap(),
                radius: 0.01,
                band,
            };
            let r = corruption_risk(p, band, &[rfi], 0.05);
            assert!((0.0..=1.0).contains(&r));
            assert!(r <= last);
            last = r;
        }
        let mut last = 0.0;
        for k in 0..100 {
            let rfi = RfiPrediction {
                direction: DirectionLM::new(0.3, 0.0).unwrap(),
                radius: 0.003 * k as f64,
                band,
            };
            let r = corruption_risk(p, band, &[rfi], 0.05);
            assert!(r >= last);
            last = r;
        }
    }

    #[test]
    fn single_program_no_rfi_starts_at_zero() {
        let progs = [program(7, 3, 1.0)];
        for mode in [Mode::Greedy, Mode::Exact] {
            let params = PlanParams {
                mode,
                ..Default::default()
            };
            let s = schedule(&progs, &site(), 10, &[], 0.0, &[], &params).unwrap();
            assert_eq!(s.start_of(7), Some(0));
            assert_eq!(s.total_risk, 0.0);
            assert_eq!(s.objective, -1.0);
            assert!(s.unscheduled.is_empty());
        }
    }

    #[test]
    fn stationary_rfi_pushes_window_later() {
        // A stationary source parked at the target's slot-2 position, with the
        // exclusion core just covering the target's track over slots 0-4.
        let s = SiteModel {
            latitude: -0.5,
            slot_length: 600.0,
            lst0: 1.0,
        };
        let prog = [program(1, 3, 1.0)];
        let d2 = target_position(prog[0].target, &s, 2).unwrap();
        let excl = target_position(prog[0].target, &s, 0)
            .unwrap()
            .distance(&d2)
            .max(target_position(prog[0].target, &s, 4).unwrap().distance(&d2))
            + 0.01;
        let rfi = track(0, MotionClass::Stationary, d2.l, d2.m, [0.0, 0.0]);
        for mode in [Mode::Greedy, Mode::Exact] {
            let params = PlanParams {
                mode,
                exclusion_radius: excl,
                ..Default::default()
            };
            let table = RiskTable::build(
                &prog,
                &s,
                12,
                &slot_predictions(std::slice::from_ref(&rfi), &[MotionClass::Stationary], &s, 12, 0.0, &[]),
                excl,
            );
            for k in 0..5 {
                assert_eq!(table.risk[0][k], 1.0, "slot {k}");
            }
            let sched = schedule(&prog, &s, 12, std::slice::from_ref(&rfi), 0.0, &[], &params).unwrap();
            assert!(sched.start_of(1).unwrap() >= 5, "{sched:?}");
        }
    }

    fn random_table(seed: u64, n_prog: usize, horizon: usize) -> (Vec<Program>, RiskTable) {
        use rand::Rng;
        let mut rng = crate::siggen::rng_from_seed(seed);
        let programs: Vec<_> = (0..n_prog)
            .map(|i| Program {
                id: 10 + i as u64,
                target: Target { ra: 0.0, dec: 0.0 },
                freq_span: [0.0, 1.0],
                duration: rng.random_range(1..=4),
                priority: rng.random_range(1..=4) as f64 * 0.5,
            })
            .collect();
        let pointing = (0..n_prog)
            .map(|_| {
                (0..horizon)
                    .map(|_| rng.random_bool(0.85).then_some(DirectionLM::ZENITH))
                    .collect()
            })
            .collect();
        let risk = (0..n_prog)
            .map(|_| (0..horizon).map(|_| (rng.random_range(0..8) as f64) / 8.0).collect())
            .collect();
        (
            programs,
            RiskTable {
                horizon,
                pointing,
                risk,
            },
        )
    }

    /// Every assignment of programs to non-overlapping feasible windows.
    fn brute_force_best(programs: &[Program], table: &RiskTable, params: &PlanParams) -> f64 {
        let h = table.horizon;
        let options: Vec<Vec<Option<usize>>> = programs
            .iter()
            .enumerate()
            .map(|(p, prog)| {
                let mut o = vec![None];
                for s in 0..h {
                    if s + prog.duration <= h
                        && (s..s + prog.duration)
                            .all(|k| table.pointing[p][k].is_some() && table.risk[p][k] <= params.risk_cap)
                    {
                        o.push(Some(s));
                    }
                }
                o
            })
            .collect();
        let mut best = f64::INFINITY;
        let mut idx = vec![0usize; programs.len()];
        loop {
            let choice: Vec<Option<usize>> = idx.iter().enumerate().map(|(p, &i)| options[p][i]).collect();
            let mut occupied = vec![None; h];
            let mut ok = true;
            for (p, c) in choice.iter().enumerate() {
                if let Some(s) = c {
                    for slot in occupied.iter_mut().skip(*s).take(programs[p].duration) {
                        if slot.is_some() {
                            ok = false;
                        }
                        *slot = Some(p);
                    }
                }
            }
            if ok {
                let mut total = 0.0;
                for (k, o) in occupied.iter().enumerate() {
                    total += o.map_or(0.0, |p| table.risk[p][k]);
                }
                let mut prio = 0.0;
                for (p, c) in choice.iter().enumerate() {
                    if c.is_some() {
                        prio += programs[p].priority;
                    }
                }
                best = best.min(total - params.lambda * prio);
            }
            let mut k = 0;
            loop {
                if k == idx.len() {
                    return best;
                }
                idx[k] += 1;
                if idx[k] < options[k].len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    #[test]
    fn exact_matches_brute_force_and_bounds_greedy() {
        for seed in 0..40 {
            let (programs, table) = random_table(seed, 3 + (seed as usize % 3), 8 + (seed as usize % 5));
            let exact = schedule_table(
                &programs,
                &table,
                &PlanParams {
                    mode: Mode::Exact,
                    ..Default::default()
                },
            )
            .unwrap();
            let greedy = schedule_table(&programs, &table, &PlanParams::default()).unwrap();
            let oracle = brute_force_best(&programs, &table, &PlanParams::default());
            assert_eq!(exact.objective, oracle, "seed {seed}");
            assert!(greedy.objective >= exact.objective, "seed {seed}");
        }
    }

    #[test]
    fn greedy_equals_exact_for_one_program() {
        for seed in 0..40 {
            let (programs, table) = random_table(100 + seed, 1, 12);
            let exact = schedule_table(
                &programs,
                &table,
                &PlanParams {
                    mode: Mode::Exact,
                    ..Default::default()
                },
            )
            .unwrap();
            let greedy = schedule_table(&programs, &table, &PlanParams::default()).unwrap();
            assert_eq!(greedy, exact, "seed {seed}");
        }
    }

    #[test]
    fn exact_limits_and_short_horizon() {
        let progs: Vec<_> = (0..7).map(|i| program(i, 1, 1.0)).collect();
        let params = PlanParams {
            mode: Mode::Exact,
            ..Default::default()
        };
        assert!(matches!(
            schedule(&progs, &site(), 10, &[], 0.0, &[], &params),
            Err(SchedError::ExactTooLarge { .. })
        ));
        assert!(matches!(
            schedule(&progs[..2], &site(), 13, &[], 0.0, &[], &params),
            Err(SchedError::ExactTooLarge { .. })
        ));
        let long = [program(1, 5, 1.0), program(2, 6, 1.0)];
        let s = schedule(&long, &site(), 4, &[], 0.0, &[], &PlanParams::default()).unwrap();
        assert_eq!(s.unscheduled, vec![1, 2]);
        assert!(!s.diagnostics.is_empty());
    }

    #[test]
    fn never_schedules_below_horizon() {
        // Target at the opposite pole is never up.
        let hidden = Program {
            target: Target { ra: 0.0, dec: 1.2 },
            ..program(1, 1, 5.0)
        };
        let s = schedule(&[hidden], &site(), 10, &[], 0.0, &[], &PlanParams::default()).unwrap();
        assert_eq!(s.unscheduled, vec![1]);
        assert!(s.slots.iter().all(|a| a.program.is_none()));
    }

    fn crossing_setup() -> (Schedule, SiteModel, RfiTrack, Channelization, Vec<BandRule>) {
        // Pointing fixed at the zenith for 12 slots; a fast source moves along
        // l at 0.01/s starting at l = -0.8 at t = 0, so with 10-s slots and a
        // 0.15 exclusion radius it is inside the beam during slots 7-9.
        let s = SiteModel {
            latitude: 0.0,
            slot_length: 10.0,
            lst0: 0.0,
        };
        let sched = Schedule {
            slots: (0..12)
                .map(|slot| SlotAssignment {
                    slot,
                    program: Some(1),
                    pointing: Some(DirectionLM::ZENITH),
                    risk: 0.0,
                })
                .collect(),
            total_risk: 0.0,
            objective: 0.0,
            unscheduled: vec![],
            diagnostics: vec![],
        };
        let mut fast = track(3, MotionClass::Fast, -0.8, 0.0, [0.01, 0.0]);
        fast.model = MotionModel::fit(&fast.history);
        let channels = Channelization {
            f_start: 1.0e9,
            width: 1.0e6,
            count: 8,
        };
        let bands = vec![BandRule {
            alpha: 1.0,
            alpha_tol: 0.0,
            band: [1.003e9, 1.006e9],
        }];
        (sched, s, fast, channels, bands)
    }

    #[test]
    fn flag_mask_matches_geometric_truth() {
        let (sched, s, fast, channels, bands) = crossing_setup();
        let mask = flag_mask(std::slice::from_ref(&fast), &sched, &s, 0.0, 0.15, &channels, &bands).unwrap();
        for slot in 0..12 {
            for c in 0..8 {
                let truth = (7..=9).contains(&slot) && (3..=5).contains(&c);
                assert_eq!(mask.get(slot, c), truth, "slot {slot} channel {c}");
            }
        }
        let wider = flag_mask(std::slice::from_ref(&fast), &sched, &s, 0.0, 0.3, &channels, &bands).unwrap();
        assert!(mask.is_subset_of(&wider));
        assert!(wider.count() > mask.count());

        let mut slow = fast;
        slow.class = MotionClass::Slow;
        let none = flag_mask(&[slow], &sched, &s, 0.0, 0.15, &channels, &bands).unwrap();
        assert_eq!(none.count(), 0);
    }

    #[test]
    fn mask_csv_round_trips() {
        let (sched, s, fast, channels, bands) = crossing_setup();
        let mask = flag_mask(&[fast], &sched, &s, 0.0, 0.15, &channels, &bands).unwrap();
        let csv = mask.to_csv();
        assert!(csv.starts_with("# slot_length_s=10 channel_width_hz=1000000 f_start_hz=1000000000\n"));
        assert_eq!(FlagMask::from_csv(&csv).unwrap(), mask);
        assert!(FlagMask::from_csv("# slot_length_s=1 channel_width_hz=1 f_start_hz=0\n0,2\n").is_err());
    }

    #[test]
    fn schedule_json_round_trips() {
        let progs = [program(1, 2, 1.0), program(2, 3, 2.0)];
        let s = schedule(&progs, &site(), 10, &[], 0.0, &[], &PlanParams::default()).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let back: Schedule = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
