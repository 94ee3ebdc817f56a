//! Per-station multi-object tracking: Kalman prediction, IoU-gated
//! assignment and a tentative/confirmed/deleted track lifecycle.

mod assignment;
mod kalman;

pub use assignment::{solve_assignment, CostMatrix};
pub use kalman::{kf_predict, kf_update, KalmanState, Measurement, StateCovariance, StateVector};

pub use crate::geometry::iou;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::ingest::{DetectionBox, FrameRecord, ObjectClass};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("innovation covariance is not positive definite")]
    SingularInnovation,
    #[error("invalid measurement {0:?}")]
    InvalidMeasurement([f64; 4]),
    #[error("frame {frame_index} on station {station} arrived out of order")]
    OutOfOrderFrame { station: String, frame_index: u64 },
    #[error("invalid tracker parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    /// Minimum IoU between a predicted box and a detection for them to match.
    pub iou_gate: f64,
    /// Consecutive misses a confirmed track survives.
    pub max_misses: u32,
    /// Consecutive hits needed to confirm a track.
    pub min_hits: u32,
    pub pos_std_factor: f64,
    pub vel_std_factor: f64,
    /// Upper bound on the prediction step after a stream gap, in frames.
    pub max_dt_frames: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        TrackerParams {
            iou_gate: 0.3,
            max_misses: 5,
            min_hits: 3,
            pos_std_factor: 1.0 / 20.0,
            vel_std_factor: 1.0 / 160.0,
            max_dt_frames: 10.0,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let bad = |m: &str| Err(TrackerError::InvalidParams(m.to_string()));
        if !(self.iou_gate > 0.0 && self.iou_gate <= 1.0) {
            return bad("iou_gate must lie in (0, 1]");
        }
        if self.max_misses < 1 || self.min_hits < 1 {
            return bad("max_misses and min_hits must be at least 1");
        }
        if !(self.pos_std_factor > 0.0 && self.vel_std_factor > 0.0 && self.max_dt_frames > 0.0) {
            return bad("noise factors and max_dt_frames must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Deleted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    pub class: ObjectClass,
    pub state: KalmanState,
    pub status: TrackStatus,
    pub hits: u32,
    pub misses: u32,
    pub first_seen: DateTime<Utc>,
    pub last_seen: DateTime<Utc>,
    /// Box of the most recent matched detection.
    pub last_box: BBox,
}

impl Track {
    pub fn predicted_box(&self) -> BBox {
        BBox::from_xyah(self.state.measurement())
    }

    /// True when the track was matched (or spawned) on the latest frame.
    pub fn is_fresh(&self) -> bool {
        self.misses == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Started,
    Confirmed,
    Ended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEvent {
    #[serde(rename = "station")]
    pub station_id: String,
    pub track_id: u64,
    #[serde(rename = "cls")]
    pub class: ObjectClass,
    pub kind: EventKind,
    #[serde(rename = "ts", with = "crate::serde_ts")]
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    /// `(track index, detection index)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_dets: Vec<usize>,
}

/// Matches tracks (already predicted to this frame) against detections of the same class.
pub fn associate(tracks: &[Track], dets: &[DetectionBox], p: &TrackerParams) -> Association {
    let mut cost = CostMatrix::new(tracks.len(), dets.len(), f64::INFINITY);
    for (ti, t) in tracks.iter().enumerate() {
        let predicted = t.predicted_box();
        for (di, d) in dets.iter().enumerate() {
            if t.class != d.class {
                continue;
            }
            if let Ok(overlap) = iou(&predicted, &d.bbox) {
                if overlap >= p.iou_gate {
                    cost.set(ti, di, 1.0 - overlap);
                }
            }
        }
    }
    let matches = solve_assignment(&cost);
    let mut track_used = vec![false; tracks.len()];
    let mut det_used = vec![false; dets.len()];
    for &(t, d) in &matches {
        track_used[t] = true;
        det_used[d] = true;
    }
    Association {
        matches,
        unmatched_tracks: (0..tracks.len()).filter(|&i| !track_used[i]).collect(),
        unmatched_dets: (0..dets.len()).filter(|&i| !det_used[i]).collect(),
    }
}

/// Tracker state for one station. Frames must arrive in order.
#[derive(Debug, Clone)]
pub struct StationTracker {
    station_id: String,
    frame_rate: f64,
    params: TrackerParams,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<(u64, DateTime<Utc>)>,
}

impl StationTracker {
    pub fn new(station_id: impl Into<String>, frame_rate: f64, params: TrackerParams) -> Self {
        StationTracker {
            station_id: station_id.into(),
            frame_rate,
            params,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
        }
    }

    pub fn params(&self) -> &TrackerParams {
        &self.params
    }

    /// Live (tentative or confirmed) tracks, ordered by id.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    fn event(&self, kind: EventKind, t: &Track, ts: DateTime<Utc>) -> TrackEvent {
        TrackEvent {
            station_id: self.station_id.clone(),
            track_id: t.track_id,
            class: t.class,
            kind,
            timestamp: ts,
        }
    }

    /// Advances every track by one frame and returns the lifecycle events it caused.
    pub fn step(&mut self, frame: &FrameRecord) -> Result<Vec<TrackEvent>, TrackerError> {
        let ts = frame.timestamp;
        if let Some((idx, last_ts)) = self.last_frame {
            if frame.frame_index <= idx || ts < last_ts {
                return Err(TrackerError::OutOfOrderFrame {
                    station: self.station_id.clone(),
                    frame_index: frame.frame_index,
                });
            }
            let elapsed = (ts - last_ts).num_milliseconds() as f64 / 1000.0;
            let dt = (elapsed * self.frame_rate).min(self.params.max_dt_frames);
            if dt > 0.0 {
                for t in &mut self.tracks {
                    t.state = kf_predict(&t.state, dt, &self.params);
                }
            }
        }
        self.last_frame = Some((frame.frame_index, ts));

        let assoc = associate(&self.tracks, &frame.detections, &self.params);
        let mut events = Vec::new();
        let mut orphaned = Vec::new();

        for &(ti, di) in &assoc.matches {
            let det = &frame.detections[di];
            let p = self.params;
            let t = &mut self.tracks[ti];
            match kf_update(&t.state, det.bbox.to_xyah(), &p) {
                Ok(state) => {
                    t.state = state;
                    t.hits += 1;
                    t.misses = 0;
                    t.last_seen = ts;
                    t.last_box = det.bbox;
                    if t.status == TrackStatus::Tentative && t.hits >= p.min_hits {
                        t.status = TrackStatus::Confirmed;
                        let ev = self.event(EventKind::Confirmed, &self.tracks[ti], ts);
                        events.push(ev);
                    }
                }
                Err(e) => {
                    log::warn!(
                        "station {}: aborting track {} ({e})",
                        self.station_id,
                        t.track_id
                    );
                    if t.status == TrackStatus::Confirmed {
                        let ev = self.event(EventKind::Ended, &self.tracks[ti], self.tracks[ti].last_seen);
                        events.push(ev);
                    }
                    self.tracks[ti].status = TrackStatus::Deleted;
                    orphaned.push(di);
                }
            }
        }

        for &ti in &assoc.unmatched_tracks {
            let max_misses = self.params.max_misses;
            let t = &mut self.tracks[ti];
            t.misses += 1;
            match t.status {
                TrackStatus::Tentative => t.status = TrackStatus::Deleted,
                TrackStatus::Confirmed if t.misses > max_misses => {
                    t.status = TrackStatus::Deleted;
                    let ev = self.event(EventKind::Ended, &self.tracks[ti], self.tracks[ti].last_seen);
                    events.push(ev);
                }
                _ => {}
            }
        }
        self.tracks.retain(|t| t.status != TrackStatus::Deleted);

        let mut spawn: Vec<usize> = assoc.unmatched_dets.clone();
        spawn.extend(orphaned);
        spawn.sort_unstable();
        for di in spawn {
            let det = &frame.detections[di];
            let mut track = Track {
                track_id: self.next_id,
                class: det.class,
                state: KalmanState::initiate(det.bbox.to_xyah(), &self.params),
                status: TrackStatus::Tentative,
                hits: 1,
                misses: 0,
                first_seen: ts,
                last_seen: ts,
                last_box: det.bbox,
            };
            self.next_id += 1;
            events.push(self.event(EventKind::Started, &track, ts));
            if track.hits >= self.params.min_hits {
                track.status = TrackStatus::Confirmed;
                events.push(self.event(EventKind::Confirmed, &track, ts));
            }
            self.tracks.push(track);
        }
        Ok(events)
    }

    /// Ends every live confirmed track at its last sighting; used when the stream is exhausted.
    pub fn finish(&mut self) -> Vec<TrackEvent> {
        let events = self
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Confirmed)
            .map(|t| self.event(EventKind::Ended, t, t.last_seen))
            .collect();
        self.tracks.clear();
        events
    }
}
