//! Frame-granular detection streams: wire format, validation and the shift calendar.

mod calendar;
mod stream;
mod validate;

pub use calendar::{scope_of, CalendarError, ResolvedCalendar, Scope, ShiftCalendar};
pub use stream::{
    format_ts, parse_frame_line, parse_frame_stream, parse_ground_truth_line, serialize_frame,
    serialize_ground_truth,
    FrameStream, MalformedRecord, ParseSummary, ParsedStream, Strictness, DEFAULT_MAX_MALFORMED,
};
pub use validate::{validate_stream, Gap, StreamValidator, ValidatedStream};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::geometry::{BBox, Polygon};

/// Default sampling rate of the camera feeds, in frames per second.
pub const DEFAULT_FRAME_RATE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Worker,
    Chair,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 2] = [ObjectClass::Worker, ObjectClass::Chair];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectClass::Worker => "worker",
            ObjectClass::Chair => "chair",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionBox {
    pub class: ObjectClass,
    pub bbox: BBox,
    pub confidence: f64,
}

impl DetectionBox {
    pub fn new(class: ObjectClass, bbox: BBox, confidence: f64) -> Self {
        DetectionBox { class, bbox, confidence }
    }

    pub fn check(&self) -> Result<(), String> {
        let b = &self.bbox;
        if ![b.x, b.y, b.w, b.h, self.confidence].iter().all(|v| v.is_finite()) {
            return Err("non-finite number in detection".into());
        }
        if b.w <= 0.0 || b.h <= 0.0 {
            return Err(format!("box extent must be positive, got w={} h={}", b.w, b.h));
        }
        if b.x < 0.0 || b.y < 0.0 {
            return Err(format!("box origin must be non-negative, got x={} y={}", b.x, b.y));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        Ok(())
    }
}

/// One camera frame with every detection it produced; an empty list means nothing was seen.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub station_id: String,
    pub timestamp: DateTime<Utc>,
    pub frame_index: u64,
    pub detections: Vec<DetectionBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationConfig {
    pub station_id: String,
    #[serde(default)]
    pub roi: Option<Polygon>,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    #[serde(default = "default_image_size")]
    pub image_size: (u32, u32),
}

fn default_frame_rate() -> f64 {
    DEFAULT_FRAME_RATE
}

fn default_image_size() -> (u32, u32) {
    (1280, 720)
}

impl StationConfig {
    pub fn new(station_id: impl Into<String>) -> Self {
        StationConfig {
            station_id: station_id.into(),
            roi: None,
            frame_rate: DEFAULT_FRAME_RATE,
            image_size: default_image_size(),
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.station_id.is_empty() {
            return Err(IngestError::InvalidConfig("empty station_id".into()));
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(IngestError::InvalidConfig(format!(
                "station {}: frame_rate must be positive, got {}",
                self.station_id, self.frame_rate
            )));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(IngestError::InvalidConfig(format!(
                "station {}: image_size must be non-zero",
                self.station_id
            )));
        }
        Ok(())
    }

    pub fn frame_period_seconds(&self) -> f64 {
        1.0 / self.frame_rate
    }

    /// Whether a box center counts as being at the station.
    pub fn roi_contains(&self, bbox: &BBox) -> bool {
        let (cx, cy) = bbox.center();
        match &self.roi {
            Some(poly) => poly.contains(cx, cy),
            None => true,
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{0}")]
    Malformed(MalformedRecord),
    #[error("{malformed} of {total} lines malformed, above the {limit_pct}% limit")]
    TooManyMalformed {
        malformed: usize,
        total: usize,
        limit_pct: f64,
    },
    #[error("non-monotonic frame on station {station}: frame {frame_index}")]
    NonMonotonicTimestamp { station: String, frame_index: u64 },
    #[error("frame for station {found} routed to station {expected}")]
    StationMismatch { expected: String, found: String },
    #[error("unknown timezone {0:?}")]
    UnknownTimezone(String),
    #[error("invalid station config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Calendar(#[from] CalendarError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
