//! Scripted station scenarios rendered into detection streams, with the
//! exact expected states, cycles and shares computed from the script alone.

mod fixture;

pub use fixture::{reference_fixture, FixtureLayout};

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::analytics::{share_percentages, CycleRecord, PeriodKind, TallyAccumulator};
use crate::geometry::BBox;
use crate::ingest::{DetectionBox, FrameRecord, ObjectClass, ResolvedCalendar, Scope, ShiftCalendar};
use crate::statemach::{classify_bools, StationStatus};

/// Name of the noise generator, recorded in oracle metadata.
pub const RNG_NAME: &str = "chacha8";

pub const WORKER_SIZE: (f64, f64) = (80.0, 200.0);
pub const CHAIR_SIZE: (f64, f64) = (150.0, 150.0);
/// Top-left corner of the worker box.
pub const WORKER_ANCHOR: (f64, f64) = (200.0, 300.0);
/// Alternating chair positions; successive chairs never overlap.
pub const CHAIR_SLOTS: [(f64, f64); 2] = [(500.0, 300.0), (800.0, 300.0)];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid script: {0}")]
    InvalidScript(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, SimError> {
    Err(SimError::InvalidScript(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Independent per-entity, per-frame drop probability.
    #[serde(default)]
    pub miss_prob: f64,
    /// Uniform position jitter half-width in pixels.
    #[serde(default)]
    pub jitter_px: f64,
    #[serde(default = "default_conf_range")]
    pub conf_range: (f64, f64),
    #[serde(default)]
    pub seed: u64,
}

fn default_conf_range() -> (f64, f64) {
    (0.85, 0.99)
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            miss_prob: 0.0,
            jitter_px: 0.0,
            conf_range: default_conf_range(),
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..1.0).contains(&self.miss_prob) {
            return invalid(format!("miss_prob must lie in [0, 1), got {}", self.miss_prob));
        }
        if !(self.jitter_px >= 0.0 && self.jitter_px.is_finite()) {
            return invalid(format!("jitter_px must be non-negative, got {}", self.jitter_px));
        }
        let (lo, hi) = self.conf_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return invalid(format!("conf_range must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})"));
        }
        Ok(())
    }
}

/// What is at the station during `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub worker: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chair: Option<String>,
}

/// A station scenario. Time not covered by any interval has nothing present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub station_id: String,
    pub frame_rate: f64,
    /// First local date simulated.
    pub start_date: NaiveDate,
    /// Local date after the last one simulated.
    pub end_date: NaiveDate,
    /// Emit frames during breaks (they carry the `Excluded` state).
    #[serde(default)]
    pub include_breaks: bool,
    pub calendar: ShiftCalendar,
    #[serde(default)]
    pub noise: NoiseModel,
    /// Sorted and non-overlapping.
    #[serde(default)]
    pub intervals: Vec<Interval>,
}

impl ScenarioScript {
    pub fn validate(&self) -> Result<ResolvedCalendar, SimError> {
        if self.station_id.is_empty() {
            return invalid("empty station_id");
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return invalid(format!("frame_rate must be positive, got {}", self.frame_rate));
        }
        if self.end_date < self.start_date {
            return invalid("end_date precedes start_date");
        }
        self.noise.validate()?;
        let cal = self
            .calendar
            .resolve()
            .map_err(|e| SimError::InvalidScript(e.to_string()))?;
        for (i, iv) in self.intervals.iter().enumerate() {
            if iv.start >= iv.end {
                return invalid(format!("interval {i} is empty"));
            }
            if matches!(&iv.chair, Some(c) if c.is_empty()) {
                return invalid(format!("interval {i} has an empty chair id"));
            }
            if i > 0 && self.intervals[i - 1].end > iv.start {
                return invalid(format!("interval {i} overlaps or precedes interval {}", i - 1));
            }
        }
        Ok(cal)
    }

    pub fn from_toml(s: &str) -> Result<Self, SimError> {
        toml::from_str(s).map_err(|e| SimError::InvalidScript(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("script serialization cannot fail")
    }

    /// Chair runs: maximal chains of touching intervals with the same chair id.
    /// Returns, per interval, the index of its run; run indices are contiguous from 0.
    fn chair_runs(&self) -> Vec<Option<usize>> {
        let mut out = Vec::with_capacity(self.intervals.len());
        let mut run = 0usize;
        let mut prev: Option<(&str, DateTime<Utc>)> = None;
        for iv in &self.intervals {
            match &iv.chair {
                Some(c) => {
                    let continues = matches!(prev, Some((p, end)) if p == c && end == iv.start);
                    if prev.is_some() && !continues {
                        run += 1;
                    }
                    out.push(Some(run));
                    prev = Some((c.as_str(), iv.end));
                }
                None => {
                    out.push(None);
                    if prev.is_some() {
                        run += 1;
                    }
                    prev = None;
                }
            }
        }
        out
    }
}

/// One emitted frame position on the sampling grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFrame {
    pub frame_index: u64,
    pub timestamp: DateTime<Utc>,
    pub scope: Scope,
}

/// Sampling grid: per workday, `shift_start + round(k / frame_rate)` while inside the shift.
pub struct FrameGrid {
    cal: ResolvedCalendar,
    calendar: ShiftCalendar,
    frame_rate: f64,
    include_breaks: bool,
    day: NaiveDate,
    end_date: NaiveDate,
    day_window: Option<(DateTime<Utc>, DateTime<Utc>)>,
    k: i64,
    next_index: u64,
}

impl FrameGrid {
    fn new(script: &ScenarioScript, cal: ResolvedCalendar) -> Self {
        FrameGrid {
            cal,
            calendar: script.calendar.clone(),
            frame_rate: script.frame_rate,
            include_breaks: script.include_breaks,
            day: script.start_date,
            end_date: script.end_date,
            day_window: None,
            k: 0,
            next_index: 0,
        }
    }

    fn local_instant(&self, day: NaiveDate, t: chrono::NaiveTime) -> Option<DateTime<Utc>> {
        day.and_time(t)
            .and_local_timezone(self.cal.tz())
            .earliest()
            .map(|d| d.with_timezone(&Utc))
    }
}

impl Iterator for FrameGrid {
    type Item = GridFrame;

    fn next(&mut self) -> Option<GridFrame> {
        loop {
            if self.day_window.is_none() {
                while self.day < self.end_date {
                    let d = self.day;
                    self.day = d.succ_opt()?;
                    if !self.cal.is_workday(chrono::Datelike::weekday(&d)) {
                        continue;
                    }
                    let start = self.local_instant(d, self.calendar.shift_start);
                    let end = self.local_instant(d, self.calendar.shift_end);
                    if let (Some(s), Some(e)) = (start, end) {
                        self.day_window = Some((s, e));
                        self.k = 0;
                        break;
                    }
                }
                self.day_window?;
            }
            let (start, end) = self.day_window.expect("set above");
            let offset_ms = (self.k as f64 * 1000.0 / self.frame_rate).round() as i64;
            let ts = start + Duration::milliseconds(offset_ms);
            if ts >= end {
                self.day_window = None;
                continue;
            }
            self.k += 1;
            let scope = self.cal.scope_of(&ts);
            if scope == Scope::Break && !self.include_breaks {
                continue;
            }
            let frame_index = self.next_index;
            self.next_index += 1;
            return Some(GridFrame {
                frame_index,
                timestamp: ts,
                scope,
            });
        }
    }
}

/// What the script says is present at `ts`, given a cursor that only moves forward.
struct Cursor<'a> {
    intervals: &'a [Interval],
    runs: Vec<Option<usize>>,
    i: usize,
}

impl<'a> Cursor<'a> {
    fn new(script: &'a ScenarioScript) -> Self {
        Cursor {
            intervals: &script.intervals,
            runs: script.chair_runs(),
            i: 0,
        }
    }

    /// `(worker, chair run)` at `ts`.
    fn at(&mut self, ts: DateTime<Utc>) -> (bool, Option<usize>) {
        while self.i < self.intervals.len() && self.intervals[self.i].end <= ts {
            self.i += 1;
        }
        match self.intervals.get(self.i) {
            Some(iv) if iv.start <= ts => (iv.worker, self.runs[self.i]),
            _ => (false, None),
        }
    }
}

/// Rounds to `places` decimals so the value prints as a short decimal.
fn round_dp(x: f64, places: i32) -> f64 {
    let k = 10f64.powi(places);
    (x * k).round() / k
}

fn nominal_box(class: ObjectClass, chair_run: usize) -> BBox {
    match class {
        ObjectClass::Worker => BBox::new(WORKER_ANCHOR.0, WORKER_ANCHOR.1, WORKER_SIZE.0, WORKER_SIZE.1),
        ObjectClass::Chair => {
            let (x, y) = CHAIR_SLOTS[chair_run % 2];
            BBox::new(x, y, CHAIR_SIZE.0, CHAIR_SIZE.1)
        }
    }
}

/// Lazily rendered detection stream for a script.
pub struct FrameGenerator<'a> {
    station_id: String,
    grid: FrameGrid,
    cursor: Cursor<'a>,
    noise: NoiseModel,
    rng: ChaCha8Rng,
}

impl Iterator for FrameGenerator<'_> {
    type Item = FrameRecord;

    fn next(&mut self) -> Option<FrameRecord> {
        let g = self.grid.next()?;
        let (worker, chair) = self.cursor.at(g.timestamp);
        let mut present = Vec::with_capacity(2);
        if worker {
            present.push((ObjectClass::Worker, 0));
        }
        if let Some(run) = chair {
            present.push((ObjectClass::Chair, run));
        }
        let mut detections = Vec::with_capacity(present.len());
        for (class, run) in present {
            // Fixed draw order per entity keeps streams aligned across noise settings.
            let missed = self.rng.gen::<f64>() < self.noise.miss_prob;
            let dx = self.rng.gen_range(-1.0..=1.0) * self.noise.jitter_px;
            let dy = self.rng.gen_range(-1.0..=1.0) * self.noise.jitter_px;
            let (lo, hi) = self.noise.conf_range;
            let conf = lo + (hi - lo) * self.rng.gen::<f64>();
            if missed {
                continue;
            }
            let b = nominal_box(class, run);
            detections.push(DetectionBox::new(
                class,
                BBox::new(round_dp(b.x + dx, 2), round_dp(b.y + dy, 2), b.w, b.h),
                round_dp(conf, 3).clamp(0.001, 1.0),
            ));
        }
        Some(FrameRecord {
            station_id: self.station_id.clone(),
            timestamp: g.timestamp,
            frame_index: g.frame_index,
            detections,
        })
    }
}

/// Streams the frames of a script. Deterministic for a given seed.
pub fn frames(script: &ScenarioScript) -> Result<FrameGenerator<'_>, SimError> {
    let cal = script.validate()?;
    Ok(FrameGenerator {
        station_id: script.station_id.clone(),
        grid: FrameGrid::new(script, cal),
        cursor: Cursor::new(script),
        noise: script.noise.clone(),
        rng: ChaCha8Rng::seed_from_u64(script.noise.seed),
    })
}

/// Run of consecutive frames sharing one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineSegment {
    /// Timestamp of the first frame.
    #[serde(with = "crate::serde_ts")]
    pub start: DateTime<Utc>,
    /// Timestamp of the last frame.
    #[serde(with = "crate::serde_ts")]
    pub end: DateTime<Utc>,
    pub first_frame: u64,
    pub frames: u64,
    pub status: StationStatus,
}

/// One chair's stay, both as scripted and as seen on the frame grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCycle {
    pub chair: String,
    #[serde(with = "crate::serde_ts")]
    pub scripted_start: DateTime<Utc>,
    #[serde(with = "crate::serde_ts")]
    pub scripted_end: DateTime<Utc>,
    pub scripted_seconds: f64,
    /// First and last emitted frame showing the chair; absent if none was emitted.
    #[serde(default, with = "opt_ts", skip_serializing_if = "Option::is_none")]
    pub sampled_start: Option<DateTime<Utc>>,
    #[serde(default, with = "opt_ts", skip_serializing_if = "Option::is_none")]
    pub sampled_end: Option<DateTime<Utc>>,
    pub sampled_seconds: Option<f64>,
    pub frames: u64,
}

mod opt_ts {
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &Option<DateTime<Utc>>, s: S) -> Result<S::Ok, S::Error> {
        match ts {
            Some(t) => crate::serde_ts::serialize(t, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DateTime<Utc>>, D::Error> {
        let s: Option<String> = Option::deserialize(d)?;
        s.map(|s| {
            DateTime::parse_from_rfc3339(&s)
                .map(|t| t.with_timezone(&Utc))
                .map_err(serde::de::Error::custom)
        })
        .transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleShare {
    pub period_kind: PeriodKind,
    pub period: String,
    pub frames: u64,
    pub in_shift_frames: u64,
    pub counts: BTreeMap<StationStatus, u64>,
    /// One-decimal percentages summing to 100.0; absent without in-shift frames.
    pub pct: Option<BTreeMap<StationStatus, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleMetadata {
    pub station_id: String,
    pub rng: String,
    pub seed: u64,
    pub frame_rate: f64,
    pub frames: u64,
}

/// Expected pipeline output, derived from the script and the frame grid only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTruth {
    pub metadata: OracleMetadata,
    pub timeline: Vec<TimelineSegment>,
    pub cycles: Vec<OracleCycle>,
    pub shares: Vec<OracleShare>,
}

impl OracleTruth {
    /// Per-frame states, expanded from the run-length timeline.
    pub fn statuses(&self) -> impl Iterator<Item = StationStatus> + '_ {
        self.timeline
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.status, s.frames as usize))
    }

    pub fn share(&self, kind: PeriodKind, period: &str) -> Option<&OracleShare> {
        self.shares.iter().find(|s| s.period_kind == kind && s.period == period)
    }

    /// Cycles as the pipeline would measure them: first to last sighting.
    pub fn sampled_cycle_records(&self) -> Vec<CycleRecord> {
        self.cycles
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                let (s, e) = (c.sampled_start?, c.sampled_end?);
                (e > s).then(|| CycleRecord::new(self.metadata.station_id.clone(), i as u64 + 1, s, e))
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("oracle serialization cannot fail");
        s.push('\n');
        s
    }
}

/// Computes the expected result of a script without rendering detections.
pub fn oracle(script: &ScenarioScript) -> Result<OracleTruth, SimError> {
    let cal = script.validate()?;
    let tz = cal.tz();
    let grid = FrameGrid::new(script, cal);
    let mut cursor = Cursor::new(script);
    let runs = script.chair_runs();

    let mut cycles: Vec<OracleCycle> = Vec::new();
    for (iv, run) in script.intervals.iter().zip(&runs) {
        if let (Some(run), Some(chair)) = (run, &iv.chair) {
            if *run == cycles.len() {
                cycles.push(OracleCycle {
                    chair: chair.clone(),
                    scripted_start: iv.start,
                    scripted_end: iv.end,
                    scripted_seconds: 0.0,
                    sampled_start: None,
                    sampled_end: None,
                    sampled_seconds: None,
                    frames: 0,
                });
            }
            cycles[*run].scripted_end = iv.end;
        }
    }

    let mut acc = TallyAccumulator::new(tz);
    let mut timeline: Vec<TimelineSegment> = Vec::new();
    let mut frames = 0u64;
    for g in grid {
        frames += 1;
        let (worker, chair) = cursor.at(g.timestamp);
        let status = classify_bools(worker, chair.is_some(), g.scope);
        acc.push(&g.timestamp, status);
        match timeline.last_mut() {
            Some(seg) if seg.status == status && seg.first_frame + seg.frames == g.frame_index => {
                seg.frames += 1;
                seg.end = g.timestamp;
            }
            _ => timeline.push(TimelineSegment {
                start: g.timestamp,
                end: g.timestamp,
                first_frame: g.frame_index,
                frames: 1,
                status,
            }),
        }
        if let Some(run) = chair {
            let c = &mut cycles[run];
            c.sampled_start.get_or_insert(g.timestamp);
            c.sampled_end = Some(g.timestamp);
            c.frames += 1;
        }
    }
    for c in &mut cycles {
        c.scripted_seconds = (c.scripted_end - c.scripted_start).num_milliseconds() as f64 / 1000.0;
        c.sampled_seconds = match (c.sampled_start, c.sampled_end) {
            (Some(s), Some(e)) => Some((e - s).num_milliseconds() as f64 / 1000.0),
            _ => None,
        };
    }

    let shares = acc
        .into_tallies()
        .into_iter()
        .map(|t| {
            let in_shift = StationStatus::IN_SHIFT.map(|s| t.count(s));
            OracleShare {
                period_kind: t.period_kind(),
                period: t.period.to_string(),
                frames: t.total_frames(),
                in_shift_frames: t.total_in_shift(),
                counts: StationStatus::ALL.iter().map(|&s| (s, t.count(s))).collect(),
                pct: share_percentages(in_shift).map(|p| {
                    StationStatus::IN_SHIFT
                        .iter()
                        .zip(p)
                        .map(|(&s, tenths)| (s, tenths as f64 / 10.0))
                        .collect()
                }),
            }
        })
        .collect();

    Ok(OracleTruth {
        metadata: OracleMetadata {
            station_id: script.station_id.clone(),
            rng: RNG_NAME.to_string(),
            seed: script.noise.seed,
            frame_rate: script.frame_rate,
            frames,
        },
        timeline,
        cycles,
        shares,
    })
}

/// Renders the whole stream and its oracle. Prefer [`frames`] for long scripts.
pub fn generate(script: &ScenarioScript) -> Result<(Vec<FrameRecord>, OracleTruth), SimError> {
    let truth = oracle(script)?;
    Ok((frames(script)?.collect(), truth))
}
