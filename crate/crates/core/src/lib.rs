//! Station productivity analytics from per-frame worker and chair detections.
//!
//! The pipeline turns a line-delimited detection stream into tracks
//! ([`tracker`]), per-frame station states ([`statemach`]) and capacity
//! reports ([`analytics`]). [`evalkit`] scores detector output against ground
//! truth and [`simgen`] produces synthetic streams with exactly known answers.
//!
//! The `examples/` directory has one runnable program per capability.

pub mod analytics;
pub mod cli;
pub mod config;
pub mod evalkit;
pub mod geometry;
pub mod ingest;
pub mod pipeline;
pub mod simgen;
pub mod statemach;
pub mod tracker;

pub use geometry::{iou, BBox, Polygon};
pub use ingest::{DetectionBox, FrameRecord, ObjectClass, ShiftCalendar, StationConfig};
pub use statemach::StationStatus;

/// RFC 3339 timestamps with millisecond precision and a `Z` suffix.
pub(crate) mod serde_ts {
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::ingest::format_ts(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}
