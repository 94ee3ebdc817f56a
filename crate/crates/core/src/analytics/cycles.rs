use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use super::AnalyticsError;
use crate::ingest::ObjectClass;
use crate::tracker::{EventKind, TrackEvent};

/// Cycles shorter than this are treated as occlusion artifacts.
pub const DEFAULT_MIN_CYCLE_SECONDS: f64 = 120.0;

/// One object's dwell at a station, from first to last sighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub track_id: u64,
    pub station_id: String,
    #[serde(with = "crate::serde_ts")]
    pub start: DateTime<Utc>,
    #[serde(with = "crate::serde_ts")]
    pub end: DateTime<Utc>,
    pub duration_seconds: f64,
}

impl CycleRecord {
    pub fn new(station_id: impl Into<String>, track_id: u64, start: DateTime<Utc>, end: DateTime<Utc>) -> Self {
        CycleRecord {
            track_id,
            station_id: station_id.into(),
            start,
            end,
            duration_seconds: (end - start).num_milliseconds() as f64 / 1000.0,
        }
    }

    pub fn duration_minutes(&self) -> f64 {
        self.duration_seconds / 60.0
    }
}

/// Builds one cycle per confirmed track of `class`, ordered by (station, start, track id).
pub fn extract_cycles(events: &[TrackEvent], class: ObjectClass) -> Result<Vec<CycleRecord>, AnalyticsError> {
    struct Open {
        start: DateTime<Utc>,
        confirmed: bool,
    }
    let mut open: HashMap<(&str, u64), Open> = HashMap::new();
    let mut cycles = Vec::new();
    for ev in events {
        let key = (ev.station_id.as_str(), ev.track_id);
        match ev.kind {
            EventKind::Started => {
                open.insert(key, Open { start: ev.timestamp, confirmed: false });
            }
            EventKind::Confirmed => {
                if let Some(o) = open.get_mut(&key) {
                    o.confirmed = true;
                }
            }
            EventKind::Ended => {
                let o = open.remove(&key).ok_or_else(|| AnalyticsError::OrphanEvent {
                    station: ev.station_id.clone(),
                    track_id: ev.track_id,
                })?;
                if ev.class == class && o.confirmed && ev.timestamp > o.start {
                    cycles.push(CycleRecord::new(ev.station_id.clone(), ev.track_id, o.start, ev.timestamp));
                }
            }
        }
    }
    cycles.sort_by(|a, b| {
        (a.station_id.as_str(), a.start, a.track_id).cmp(&(b.station_id.as_str(), b.start, b.track_id))
    });
    Ok(cycles)
}

/// Keeps cycles lasting at least `min_seconds`.
pub fn filter_cycles(cycles: &[CycleRecord], min_seconds: f64) -> Vec<CycleRecord> {
    cycles
        .iter()
        .filter(|c| c.duration_seconds >= min_seconds)
        .cloned()
        .collect()
}
