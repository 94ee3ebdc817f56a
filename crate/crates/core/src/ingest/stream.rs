use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use std::fmt;

use super::{DetectionBox, FrameRecord, IngestError, ObjectClass};
use crate::geometry::BBox;

/// Lenient parsing fails once more than this fraction of lines is malformed.
pub const DEFAULT_MAX_MALFORMED: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct MalformedRecord {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for MalformedRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "malformed record at line {}: {}", self.line, self.reason)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strictness {
    /// Abort on the first malformed line.
    Strict,
    /// Skip malformed lines, failing at the end if their share exceeds the limit.
    Lenient { max_malformed_fraction: f64 },
}

impl Default for Strictness {
    fn default() -> Self {
        Strictness::Lenient {
            max_malformed_fraction: DEFAULT_MAX_MALFORMED,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct WireDet {
    cls: ObjectClass,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conf: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct WireFrame<'a> {
    #[serde(borrow)]
    station: std::borrow::Cow<'a, str>,
    #[serde(borrow)]
    ts: std::borrow::Cow<'a, str>,
    frame: u64,
    dets: Vec<WireDet>,
}

pub fn format_ts(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn parse_ts(s: &str) -> Result<DateTime<Utc>, String> {
    let ts = DateTime::parse_from_rfc3339(s).map_err(|e| format!("bad timestamp {s:?}: {e}"))?;
    let ts = ts.with_timezone(&Utc);
    let ms = ts.timestamp_millis();
    DateTime::from_timestamp_millis(ms).ok_or_else(|| format!("timestamp out of range: {s:?}"))
}

fn decode(line: &str, line_no: usize, need_conf: bool) -> Result<FrameRecord, MalformedRecord> {
    let bad = |reason: String| MalformedRecord { line: line_no, reason };
    let wire: WireFrame<'_> = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
    if wire.station.is_empty() {
        return Err(bad("empty station".into()));
    }
    let timestamp = parse_ts(&wire.ts).map_err(bad)?;
    let mut detections = Vec::with_capacity(wire.dets.len());
    for (i, d) in wire.dets.into_iter().enumerate() {
        let confidence = match (d.conf, need_conf) {
            (Some(c), _) => c,
            (None, true) => return Err(bad(format!("detection {i}: missing conf"))),
            (None, false) => 1.0,
        };
        let [x, y, w, h] = d.bbox;
        let det = DetectionBox::new(d.cls, BBox::new(x, y, w, h), confidence);
        det.check().map_err(|r| bad(format!("detection {i}: {r}")))?;
        detections.push(det);
    }
    Ok(FrameRecord {
        station_id: wire.station.into_owned(),
        timestamp,
        frame_index: wire.frame,
        detections,
    })
}

/// Decodes one detection-stream line. `line_no` is 1-based and only used for error reporting.
pub fn parse_frame_line(line: &str, line_no: usize) -> Result<FrameRecord, MalformedRecord> {
    decode(line, line_no, true)
}

/// Ground-truth lines share the detection format but carry no `conf`.
pub fn parse_ground_truth_line(line: &str, line_no: usize) -> Result<FrameRecord, MalformedRecord> {
    decode(line, line_no, false)
}

/// Encodes a frame as one line (without the trailing LF).
pub fn serialize_frame(frame: &FrameRecord) -> String {
    serialize_with(frame, true)
}

/// Encodes a frame without confidences.
pub fn serialize_ground_truth(frame: &FrameRecord) -> String {
    serialize_with(frame, false)
}

fn serialize_with(frame: &FrameRecord, with_conf: bool) -> String {
    let ts = format_ts(&frame.timestamp);
    let wire = WireFrame {
        station: frame.station_id.as_str().into(),
        ts: ts.as_str().into(),
        frame: frame.frame_index,
        dets: frame
            .detections
            .iter()
            .map(|d| WireDet {
                cls: d.class,
                bbox: [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
                conf: with_conf.then_some(d.confidence),
            })
            .collect(),
    };
    serde_json::to_string(&wire).expect("frame serialization cannot fail")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseSummary {
    /// Non-blank lines seen.
    pub lines: usize,
    pub parsed: usize,
    pub malformed: Vec<MalformedRecord>,
}

/// Streaming parser over text lines; blank lines are ignored.
pub struct FrameStream<I> {
    lines: I,
    strictness: Strictness,
    line_no: usize,
    summary: ParseSummary,
    failed: bool,
}

impl<I, S> FrameStream<I>
where
    I: Iterator<Item = S>,
    S: AsRef<str>,
{
    pub fn new(lines: I, strictness: Strictness) -> Self {
        FrameStream {
            lines,
            strictness,
            line_no: 0,
            summary: ParseSummary::default(),
            failed: false,
        }
    }

    pub fn summary(&self) -> &ParseSummary {
        &self.summary
    }

    /// Applies the malformed-share limit once the input is exhausted.
    pub fn finish(self) -> Result<ParseSummary, IngestError> {
        if let Strictness::Lenient {
            max_malformed_fraction,
        } = self.strictness
        {
            let bad = self.summary.malformed.len();
            if self.summary.lines > 0 && bad as f64 > max_malformed_fraction * self.summary.lines as f64 {
                return Err(IngestError::TooManyMalformed {
                    malformed: bad,
                    total: self.summary.lines,
                    limit_pct: max_malformed_fraction * 100.0,
                });
            }
        }
        Ok(self.summary)
    }
}

impl<I, S> Iterator for FrameStream<I>
where
    I: Iterator<Item = S>,
    S: AsRef<str>,
{
    type Item = Result<FrameRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let text = line.as_ref();
            if text.trim().is_empty() {
                continue;
            }
            self.summary.lines += 1;
            match parse_frame_line(text, self.line_no) {
                Ok(frame) => {
                    self.summary.parsed += 1;
                    return Some(Ok(frame));
                }
                Err(bad) => match self.strictness {
                    Strictness::Strict => {
                        self.failed = true;
                        self.summary.malformed.push(bad.clone());
                        return Some(Err(IngestError::Malformed(bad)));
                    }
                    Strictness::Lenient { .. } => {
                        log::debug!("{bad}");
                        self.summary.malformed.push(bad);
                    }
                },
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParsedStream {
    pub frames: Vec<FrameRecord>,
    pub summary: ParseSummary,
}

/// Parses a whole stream, preserving input order.
pub fn parse_frame_stream<I, S>(lines: I, strictness: Strictness) -> Result<ParsedStream, IngestError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut stream = FrameStream::new(lines.into_iter(), strictness);
    let mut frames = Vec::new();
    for item in stream.by_ref() {
        frames.push(item?);
    }
    let summary = stream.finish()?;
    Ok(ParsedStream { frames, summary })
}
