use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{FrameRecord, IngestError, StationConfig};

/// Silence on a station longer than three nominal frame periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub station: String,
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
    pub seconds: f64,
}

/// Per-station ordering check, box clamping and gap detection.
#[derive(Debug, Clone)]
pub struct StreamValidator {
    cfg: StationConfig,
    last: Option<(u64, DateTime<Utc>)>,
    gap_threshold_ms: f64,
    gaps: Vec<Gap>,
    dropped_boxes: usize,
}

impl StreamValidator {
    pub fn new(cfg: StationConfig) -> Self {
        let gap_threshold_ms = 3000.0 / cfg.frame_rate;
        StreamValidator {
            cfg,
            last: None,
            gap_threshold_ms,
            gaps: Vec::new(),
            dropped_boxes: 0,
        }
    }

    /// Accepts the next frame of this station, or rejects it without changing state.
    pub fn check(&mut self, mut frame: FrameRecord) -> Result<FrameRecord, IngestError> {
        if frame.station_id != self.cfg.station_id {
            return Err(IngestError::StationMismatch {
                expected: self.cfg.station_id.clone(),
                found: frame.station_id,
            });
        }
        if let Some((idx, ts)) = self.last {
            if frame.frame_index <= idx || frame.timestamp < ts {
                return Err(IngestError::NonMonotonicTimestamp {
                    station: frame.station_id,
                    frame_index: frame.frame_index,
                });
            }
            let elapsed = (frame.timestamp - ts).num_milliseconds() as f64;
            if elapsed > self.gap_threshold_ms {
                self.gaps.push(Gap {
                    station: frame.station_id.clone(),
                    from: ts,
                    to: frame.timestamp,
                    seconds: elapsed / 1000.0,
                });
            }
        }
        let (w, h) = (self.cfg.image_size.0 as f64, self.cfg.image_size.1 as f64);
        let before = frame.detections.len();
        frame.detections.retain_mut(|d| match d.bbox.clamp_to(w, h) {
            Some(b) => {
                d.bbox = b;
                true
            }
            None => false,
        });
        self.dropped_boxes += before - frame.detections.len();
        self.last = Some((frame.frame_index, frame.timestamp));
        Ok(frame)
    }

    pub fn gaps(&self) -> &[Gap] {
        &self.gaps
    }

    /// Boxes lying entirely outside the image.
    pub fn dropped_boxes(&self) -> usize {
        self.dropped_boxes
    }

    pub fn into_gaps(self) -> Vec<Gap> {
        self.gaps
    }
}

#[derive(Debug, Clone)]
pub struct ValidatedStream {
    pub frames: Vec<FrameRecord>,
    pub gaps: Vec<Gap>,
}

/// Validates a whole single-station stream, aborting on the first ordering violation.
pub fn validate_stream(
    frames: impl IntoIterator<Item = FrameRecord>,
    cfg: &StationConfig,
) -> Result<ValidatedStream, IngestError> {
    cfg.validate()?;
    let mut v = StreamValidator::new(cfg.clone());
    let frames = frames
        .into_iter()
        .map(|f| v.check(f))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ValidatedStream {
        frames,
        gaps: v.into_gaps(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::ingest::{DetectionBox, ObjectClass};
    use chrono::TimeZone;

    fn frame(idx: u64, secs: i64, dets: Vec<DetectionBox>) -> FrameRecord {
        FrameRecord {
            station_id: "C".into(),
            timestamp: Utc.with_ymd_and_hms(2023, 7, 5, 13, 0, 0).unwrap() + chrono::Duration::milliseconds(secs),
            frame_index: idx,
            detections: dets,
        }
    }

    #[test]
    fn clamps_to_image_width() {
        let det = DetectionBox::new(ObjectClass::Chair, BBox::new(1200.0, 10.0, 200.0, 100.0), 0.9);
        let out = validate_stream([frame(0, 0, vec![det])], &StationConfig::new("C")).unwrap();
        let b = out.frames[0].detections[0].bbox;
        assert_eq!(b.x + b.w, 1280.0);
    }

    #[test]
    fn drops_boxes_fully_outside() {
        let det = DetectionBox::new(ObjectClass::Chair, BBox::new(1300.0, 10.0, 20.0, 20.0), 0.9);
        let mut v = StreamValidator::new(StationConfig::new("C"));
        assert!(v.check(frame(0, 0, vec![det])).unwrap().detections.is_empty());
        assert_eq!(v.dropped_boxes(), 1);
    }

    #[test]
    fn decreasing_frame_index_rejected() {
        let err = validate_stream([frame(5, 0, vec![]), frame(4, 3333, vec![])], &StationConfig::new("C"));
        assert!(matches!(err, Err(IngestError::NonMonotonicTimestamp { frame_index: 4, .. })));
    }

    #[test]
    fn decreasing_timestamp_rejected() {
        let mut v = StreamValidator::new(StationConfig::new("C"));
        v.check(frame(1, 5000, vec![])).unwrap();
        assert!(v.check(frame(2, 4000, vec![])).is_err());
        // Rejection leaves state untouched.
        assert!(v.check(frame(2, 5000, vec![])).is_ok());
    }

    #[test]
    fn ten_minute_silence_is_one_gap() {
        let period = 10_000 / 3;
        let mut frames: Vec<_> = (0..10).map(|i| frame(i, i as i64 * period, vec![])).collect();
        let resume = 9 * period + 600_000;
        frames.extend((0..10).map(|i| frame(10 + i, resume + i as i64 * period, vec![])));
        let out = validate_stream(frames, &StationConfig::new("C")).unwrap();
        // Threshold is 3 / 0.3 fps = 10 s; regular 3.33 s spacing never trips it.
        assert_eq!(out.gaps.len(), 1);
        assert_eq!(out.gaps[0].seconds, 600.0);
    }

    #[test]
    fn station_mismatch() {
        let mut f = frame(0, 0, vec![]);
        f.station_id = "A".into();
        assert!(matches!(
            validate_stream([f], &StationConfig::new("C")),
            Err(IngestError::StationMismatch { .. })
        ));
    }
}
