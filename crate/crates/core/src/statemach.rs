//! Station state per frame from worker/chair presence.
//!
//! | worker | chair | state        |
//! |--------|-------|--------------|
//! | yes    | yes   | Productive   |
//! | no     | yes   | Unproductive |
//! | yes    | no    | Downtime     |
//! | no     | no    | Idle         |
//!
//! Frames outside the working calendar are `Excluded`.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

use crate::geometry::BBox;
use crate::ingest::{ObjectClass, Scope, StationConfig};
use crate::tracker::{Track, TrackStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("debounce window must be odd and at least 1, got {0}")]
    InvalidWindow(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StationStatus {
    Productive,
    Unproductive,
    Downtime,
    Idle,
    Excluded,
}

impl StationStatus {
    pub const ALL: [StationStatus; 5] = [
        StationStatus::Productive,
        StationStatus::Unproductive,
        StationStatus::Downtime,
        StationStatus::Idle,
        StationStatus::Excluded,
    ];
    /// The four in-shift states, in reporting order.
    pub const IN_SHIFT: [StationStatus; 4] = [
        StationStatus::Productive,
        StationStatus::Unproductive,
        StationStatus::Downtime,
        StationStatus::Idle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StationStatus::Productive => "productive",
            StationStatus::Unproductive => "unproductive",
            StationStatus::Downtime => "downtime",
            StationStatus::Idle => "idle",
            StationStatus::Excluded => "excluded",
        }
    }
}

impl fmt::Display for StationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresenceFlags {
    pub worker_present: bool,
    pub chair_present: bool,
    pub timestamp: DateTime<Utc>,
    pub station_id: Arc<str>,
}

/// The parts of a track that presence needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackSnapshot {
    pub track_id: u64,
    pub class: ObjectClass,
    pub bbox: BBox,
    pub status: TrackStatus,
}

impl From<&Track> for TrackSnapshot {
    fn from(t: &Track) -> Self {
        TrackSnapshot {
            track_id: t.track_id,
            class: t.class,
            bbox: t.last_box,
            status: t.status,
        }
    }
}

/// Presence of each class among confirmed tracks whose box center lies in the ROI.
pub fn presence(
    tracks: &[TrackSnapshot],
    cfg: &StationConfig,
    timestamp: DateTime<Utc>,
    station_id: &Arc<str>,
) -> PresenceFlags {
    let present = |class: ObjectClass| {
        tracks
            .iter()
            .any(|t| t.class == class && t.status == TrackStatus::Confirmed && cfg.roi_contains(&t.bbox))
    };
    PresenceFlags {
        worker_present: present(ObjectClass::Worker),
        chair_present: present(ObjectClass::Chair),
        timestamp,
        station_id: Arc::clone(station_id),
    }
}

pub fn classify(f: &PresenceFlags, scope: Scope) -> StationStatus {
    classify_bools(f.worker_present, f.chair_present, scope)
}

pub fn classify_bools(worker: bool, chair: bool, scope: Scope) -> StationStatus {
    if scope != Scope::InShift {
        return StationStatus::Excluded;
    }
    match (worker, chair) {
        (true, true) => StationStatus::Productive,
        (false, true) => StationStatus::Unproductive,
        (true, false) => StationStatus::Downtime,
        (false, false) => StationStatus::Idle,
    }
}

/// Centered majority filter over a whole sequence.
pub fn debounce(flags: &[PresenceFlags], window: usize) -> Result<Vec<PresenceFlags>, StateError> {
    let mut d = Debouncer::new(window)?;
    let mut out = Vec::with_capacity(flags.len());
    for f in flags {
        out.extend(d.push(f.clone()));
    }
    out.extend(d.finish());
    Ok(out)
}

/// Streaming form of [`debounce`]; output lags input by `window / 2` frames.
#[derive(Debug, Clone)]
pub struct Debouncer {
    half: usize,
    buf: VecDeque<PresenceFlags>,
    /// Absolute index of `buf[0]`.
    base: usize,
    next: usize,
}

impl Debouncer {
    pub fn new(window: usize) -> Result<Self, StateError> {
        if window == 0 || window % 2 == 0 {
            return Err(StateError::InvalidWindow(window));
        }
        Ok(Debouncer {
            half: window / 2,
            buf: VecDeque::new(),
            base: 0,
            next: 0,
        })
    }

    pub fn push(&mut self, f: PresenceFlags) -> Vec<PresenceFlags> {
        self.buf.push_back(f);
        let mut out = Vec::new();
        while self.next + self.half < self.base + self.buf.len() {
            out.push(self.emit());
        }
        out
    }

    pub fn finish(&mut self) -> Vec<PresenceFlags> {
        let mut out = Vec::new();
        while self.next < self.base + self.buf.len() {
            out.push(self.emit());
        }
        out
    }

    fn emit(&mut self) -> PresenceFlags {
        let i = self.next;
        let lo = i.saturating_sub(self.half).max(self.base);
        let hi = (i + self.half).min(self.base + self.buf.len() - 1);
        let window = (lo..=hi).map(|j| &self.buf[j - self.base]);
        let n = hi - lo + 1;
        let (mut workers, mut chairs) = (0, 0);
        for f in window {
            workers += f.worker_present as usize;
            chairs += f.chair_present as usize;
        }
        let mut out = self.buf[i - self.base].clone();
        let vote = |count: usize, current: bool| match (2 * count).cmp(&n) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => current,
        };
        out.worker_present = vote(workers, out.worker_present);
        out.chair_present = vote(chairs, out.chair_present);
        self.next += 1;
        while self.base + self.half < self.next && !self.buf.is_empty() {
            self.buf.pop_front();
            self.base += 1;
        }
        out
    }
}
