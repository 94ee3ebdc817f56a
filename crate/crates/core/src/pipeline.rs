//! Streaming per-station processing: validation, tracking, presence,
//! debouncing, state classification and tallying.
//!
//! Presence is decided with hindsight. A confirmed track counts as present on
//! every frame from its first to its last matched detection, so the frames a
//! track spends tentative and any coasted gap that ends in a re-match are
//! credited, while coasting after the last match is not. Each frame is held
//! back until no later frame can change that verdict.

use chrono::{DateTime, Utc};
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use thiserror::Error;

use crate::analytics::{extract_cycles, AnalyticsError, ReportBundle, StationReport, TallyAccumulator};
use crate::config::RunConfig;
use crate::ingest::{FrameRecord, Gap, IngestError, ObjectClass, ResolvedCalendar, StationConfig, StreamValidator};
use crate::statemach::{classify, presence, Debouncer, PresenceFlags, StateError, StationStatus, TrackSnapshot};
use crate::tracker::{StationTracker, TrackEvent, TrackStatus, TrackerError, TrackerParams};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("tracker: {0}")]
    Tracker(#[from] TrackerError),
    #[error("statemach: {0}")]
    State(#[from] StateError),
    #[error("analytics: {0}")]
    Analytics(#[from] AnalyticsError),
    #[error("ingest: frame {frame_index} names unknown station {station:?}")]
    UnknownStation { station: String, frame_index: u64 },
    #[error("worker thread panicked")]
    WorkerPanicked,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub tracker: TrackerParams,
    pub debounce_window: usize,
    /// Keep the per-frame state timeline in the output.
    pub record_timeline: bool,
}

impl PipelineOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        PipelineOptions {
            tracker: cfg.tracker,
            debounce_window: cfg.analytics.debounce_window,
            record_timeline: false,
        }
    }
}

struct PendingFrame {
    seq: u64,
    timestamp: DateTime<Utc>,
    /// Live tracks after this frame: id, class, last matched box.
    seen: Vec<TrackSnapshot>,
}

#[derive(Clone, Copy)]
struct TrackLife {
    confirmed: bool,
    /// Sequence number of the latest matched frame.
    last_hit: u64,
}

/// Everything one station produced.
#[derive(Debug, Clone)]
pub struct StationOutput {
    pub station_id: String,
    pub tally: TallyAccumulator,
    pub events: Vec<TrackEvent>,
    pub timeline: Option<Vec<(DateTime<Utc>, StationStatus)>>,
    pub gaps: Vec<Gap>,
    pub frames: u64,
    pub dropped_boxes: usize,
}

impl StationOutput {
    pub fn report(&self, min_cycle_seconds: f64, tz: chrono_tz::Tz) -> Result<StationReport, AnalyticsError> {
        let cycles = extract_cycles(&self.events, ObjectClass::Chair)?;
        Ok(StationReport::new(
            self.station_id.clone(),
            self.tally.tallies(),
            &cycles,
            min_cycle_seconds,
            tz,
        ))
    }
}

/// One station's processing state. Frames must arrive in stream order.
pub struct StationPipeline {
    cfg: StationConfig,
    station: Arc<str>,
    cal: ResolvedCalendar,
    validator: StreamValidator,
    tracker: StationTracker,
    latency: usize,
    pending: VecDeque<PendingFrame>,
    lives: HashMap<u64, TrackLife>,
    seq: u64,
    debouncer: Debouncer,
    tally: TallyAccumulator,
    events: Vec<TrackEvent>,
    timeline: Option<Vec<(DateTime<Utc>, StationStatus)>>,
}

impl StationPipeline {
    pub fn new(cfg: StationConfig, cal: ResolvedCalendar, opts: &PipelineOptions) -> Result<Self, PipelineError> {
        cfg.validate()?;
        opts.tracker.validate()?;
        let p = &opts.tracker;
        // Confirmation needs min_hits - 1 more frames; a re-match can come max_misses frames later.
        let latency = (p.min_hits.saturating_sub(1)).max(p.max_misses) as usize + 1;
        Ok(StationPipeline {
            station: Arc::from(cfg.station_id.as_str()),
            tally: TallyAccumulator::new(cal.tz()),
            validator: StreamValidator::new(cfg.clone()),
            tracker: StationTracker::new(cfg.station_id.clone(), cfg.frame_rate, opts.tracker),
            debouncer: Debouncer::new(opts.debounce_window)?,
            timeline: opts.record_timeline.then(Vec::new),
            cfg,
            cal,
            latency,
            pending: VecDeque::new(),
            lives: HashMap::new(),
            seq: 0,
            events: Vec::new(),
        })
    }

    pub fn station_id(&self) -> &str {
        &self.station
    }

    /// Consumes one frame. A rejected frame leaves the pipeline unchanged.
    pub fn push(&mut self, frame: FrameRecord) -> Result<(), PipelineError> {
        let frame = self.validator.check(frame)?;
        let events = self.tracker.step(&frame)?;
        self.events.extend(events);
        let seq = self.seq;
        self.seq += 1;
        let mut seen = Vec::with_capacity(self.tracker.tracks().len());
        for t in self.tracker.tracks() {
            let life = self.lives.entry(t.track_id).or_insert(TrackLife {
                confirmed: false,
                last_hit: seq,
            });
            life.confirmed = t.status == TrackStatus::Confirmed;
            if t.is_fresh() {
                life.last_hit = seq;
            }
            seen.push(TrackSnapshot::from(t));
        }
        self.pending.push_back(PendingFrame {
            seq,
            timestamp: frame.timestamp,
            seen,
        });
        while self.pending.len() > self.latency {
            self.finalize_front();
        }
        if self.lives.len() > 4 * (self.tracker.tracks().len() + 8) {
            self.prune_lives();
        }
        Ok(())
    }

    fn prune_lives(&mut self) {
        let oldest = self.pending.front().map_or(self.seq, |p| p.seq);
        let tracks = self.tracker.tracks();
        self.lives
            .retain(|id, life| life.last_hit >= oldest || tracks.binary_search_by_key(id, |t| t.track_id).is_ok());
    }

    fn finalize_front(&mut self) {
        let Some(pf) = self.pending.pop_front() else {
            return;
        };
        let credited: Vec<TrackSnapshot> = pf
            .seen
            .into_iter()
            .filter(|s| {
                self.lives
                    .get(&s.track_id)
                    .is_some_and(|l| l.confirmed && l.last_hit >= pf.seq)
            })
            .map(|s| TrackSnapshot { status: TrackStatus::Confirmed, ..s })
            .collect();
        let flags = presence(&credited, &self.cfg, pf.timestamp, &self.station);
        for f in self.debouncer.push(flags) {
            self.emit(f);
        }
    }

    fn emit(&mut self, f: PresenceFlags) {
        let status = classify(&f, self.cal.scope_of(&f.timestamp));
        self.tally.push(&f.timestamp, status);
        if let Some(tl) = &mut self.timeline {
            tl.push((f.timestamp, status));
        }
    }

    /// Flushes buffered frames and ends live tracks.
    pub fn finish(mut self) -> StationOutput {
        let tail = self.tracker.finish();
        self.events.extend(tail);
        while !self.pending.is_empty() {
            self.finalize_front();
        }
        for f in self.debouncer.finish() {
            self.emit(f);
        }
        StationOutput {
            station_id: self.station.to_string(),
            tally: self.tally,
            events: self.events,
            timeline: self.timeline,
            frames: self.seq,
            dropped_boxes: self.validator.dropped_boxes(),
            gaps: self.validator.into_gaps(),
        }
    }
}

/// Record bookkeeping for a run. `lines = used + malformed + out_of_scope`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct RecordCounts {
    pub lines: u64,
    pub malformed: u64,
    pub used: u64,
    /// Frames for unconfigured stations or rejected as out of order.
    pub out_of_scope: u64,
}

#[derive(Debug, Clone)]
pub struct AnalysisOutput {
    /// Sorted by station id.
    pub stations: Vec<StationOutput>,
    pub counts: RecordCounts,
}

impl AnalysisOutput {
    pub fn report(&self, cfg: &RunConfig) -> Result<ReportBundle, PipelineError> {
        let tz = cfg.calendar.resolve()?.tz();
        let stations = self
            .stations
            .iter()
            .map(|s| s.report(cfg.analytics.min_cycle_seconds, tz))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ReportBundle::new(stations))
    }
}

struct Shard {
    pipelines: BTreeMap<String, StationPipeline>,
    strict: bool,
    rejected: u64,
    error: Option<PipelineError>,
}

impl Shard {
    fn push(&mut self, frame: FrameRecord) {
        if self.error.is_some() {
            return;
        }
        let p = self
            .pipelines
            .get_mut(&frame.station_id)
            .expect("frames are routed to the shard owning their station");
        if let Err(e) = p.push(frame) {
            match e {
                PipelineError::Ingest(IngestError::NonMonotonicTimestamp { .. }) if !self.strict => {
                    log::warn!("{e}; frame skipped");
                    self.rejected += 1;
                }
                e => self.error = Some(e),
            }
        }
    }

    fn finish(self) -> ShardResult {
        if let Some(e) = self.error {
            return Err(e);
        }
        Ok((self.pipelines.into_values().map(StationPipeline::finish).collect(), self.rejected))
    }
}

/// Finished stations of one shard and how many frames it rejected.
type ShardResult = Result<(Vec<StationOutput>, u64), PipelineError>;

enum Backend {
    Inline(Shard),
    Threaded {
        senders: Vec<mpsc::SyncSender<FrameRecord>>,
        handles: Vec<thread::JoinHandle<ShardResult>>,
    },
}

/// Routes a mixed-station frame stream to per-station pipelines.
///
/// With more than one job, stations are spread over worker threads; each
/// station's frames stay in order and results do not depend on the job count.
pub struct Analyzer {
    backend: Backend,
    shard_of: HashMap<String, usize>,
    strict: bool,
    unknown: u64,
    used: u64,
}

impl Analyzer {
    pub fn new(cfg: &RunConfig, opts: PipelineOptions, jobs: usize, strict: bool) -> Result<Self, PipelineError> {
        let cal = cfg.calendar.resolve()?;
        let jobs = jobs.clamp(1, cfg.stations.len().max(1));
        let mut shards: Vec<Shard> = (0..jobs)
            .map(|_| Shard {
                pipelines: BTreeMap::new(),
                strict,
                rejected: 0,
                error: None,
            })
            .collect();
        let mut shard_of = HashMap::new();
        for (i, s) in cfg.stations.iter().enumerate() {
            let k = i % jobs;
            shards[k]
                .pipelines
                .insert(s.station_id.clone(), StationPipeline::new(s.clone(), cal.clone(), &opts)?);
            shard_of.insert(s.station_id.clone(), k);
        }
        let backend = if jobs == 1 {
            Backend::Inline(shards.pop().expect("one shard"))
        } else {
            let mut senders = Vec::new();
            let mut handles = Vec::new();
            for mut shard in shards {
                let (tx, rx) = mpsc::sync_channel::<FrameRecord>(1024);
                senders.push(tx);
                handles.push(thread::spawn(move || {
                    for frame in rx {
                        shard.push(frame);
                    }
                    shard.finish()
                }));
            }
            Backend::Threaded { senders, handles }
        };
        Ok(Analyzer {
            backend,
            shard_of,
            strict,
            unknown: 0,
            used: 0,
        })
    }

    pub fn push(&mut self, frame: FrameRecord) -> Result<(), PipelineError> {
        let Some(&k) = self.shard_of.get(&frame.station_id) else {
            if self.strict {
                return Err(PipelineError::UnknownStation {
                    station: frame.station_id,
                    frame_index: frame.frame_index,
                });
            }
            log::debug!("frame {} for unconfigured station {:?} skipped", frame.frame_index, frame.station_id);
            self.unknown += 1;
            return Ok(());
        };
        self.used += 1;
        match &mut self.backend {
            Backend::Inline(shard) => {
                shard.push(frame);
                match shard.error.take() {
                    Some(e) => Err(e),
                    None => Ok(()),
                }
            }
            Backend::Threaded { senders, .. } => {
                // A send only fails once the worker is gone; its error surfaces in finish.
                let _ = senders[k].send(frame);
                Ok(())
            }
        }
    }

    /// Joins all stations. `lines` and `malformed` come from the caller's parser.
    pub fn finish(self, lines: u64, malformed: u64) -> Result<AnalysisOutput, PipelineError> {
        let results = match self.backend {
            Backend::Inline(shard) => vec![shard.finish()],
            Backend::Threaded { senders, handles } => {
                drop(senders);
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or(Err(PipelineError::WorkerPanicked)))
                    .collect()
            }
        };
        let mut stations = Vec::new();
        let mut rejected = 0;
        for r in results {
            let (s, rej) = r?;
            stations.extend(s);
            rejected += rej;
        }
        stations.sort_by(|a, b| a.station_id.cmp(&b.station_id));
        Ok(AnalysisOutput {
            stations,
            counts: RecordCounts {
                lines,
                malformed,
                used: self.used - rejected,
                out_of_scope: self.unknown + rejected,
            },
        })
    }
}

/// Runs already-parsed frames through a fresh analyzer.
pub fn analyze_frames(
    cfg: &RunConfig,
    frames: impl IntoIterator<Item = FrameRecord>,
    opts: PipelineOptions,
) -> Result<AnalysisOutput, PipelineError> {
    let mut a = Analyzer::new(cfg, opts, 1, false)?;
    let mut n = 0;
    for f in frames {
        n += 1;
        a.push(f)?;
    }
    a.finish(n, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::ingest::{DetectionBox, ShiftCalendar};
    use chrono::{Duration, TimeZone};

    fn cfg(window: usize) -> RunConfig {
        let mut cal = ShiftCalendar::single_morning_shift("UTC");
        cal.breaks.clear();
        let mut c = RunConfig::new(vec![StationConfig::new("C")], cal);
        c.analytics.debounce_window = window;
        c
    }

    fn opts(c: &RunConfig) -> PipelineOptions {
        PipelineOptions {
            record_timeline: true,
            ..PipelineOptions::from_config(c)
        }
    }

    fn frames(pattern: &[(bool, bool)]) -> Vec<FrameRecord> {
        let t0 = Utc.with_ymd_and_hms(2023, 7, 3, 8, 0, 0).unwrap();
        pattern
            .iter()
            .enumerate()
            .map(|(i, &(w, c))| {
                let mut dets = Vec::new();
                if w {
                    dets.push(DetectionBox::new(ObjectClass::Worker, BBox::new(200.0, 300.0, 80.0, 200.0), 0.9));
                }
                if c {
                    dets.push(DetectionBox::new(ObjectClass::Chair, BBox::new(500.0, 300.0, 150.0, 150.0), 0.9));
                }
                FrameRecord {
                    station_id: "C".into(),
                    timestamp: t0 + Duration::milliseconds(i as i64 * 3333),
                    frame_index: i as u64,
                    detections: dets,
                }
            })
            .collect()
    }

    fn statuses(out: &AnalysisOutput) -> Vec<StationStatus> {
        out.stations[0].timeline.as_ref().unwrap().iter().map(|x| x.1).collect()
    }

    #[test]
    fn tentative_frames_credited_in_hindsight() {
        let c = cfg(1);
        let mut pattern = vec![(true, true); 10];
        pattern.extend(vec![(false, false); 10]);
        let out = analyze_frames(&c, frames(&pattern), opts(&c)).unwrap();
        let s = statuses(&out);
        assert_eq!(s.len(), 20);
        assert!(s[..10].iter().all(|&x| x == StationStatus::Productive));
        assert!(s[10..].iter().all(|&x| x == StationStatus::Idle));
    }

    #[test]
    fn short_dropout_bridged_and_trailing_coast_not_credited() {
        let c = cfg(1);
        let mut pattern = vec![(true, false); 8];
        pattern.extend(vec![(false, false); 3]);
        pattern.extend(vec![(true, false); 8]);
        pattern.extend(vec![(false, false); 8]);
        let out = analyze_frames(&c, frames(&pattern), opts(&c)).unwrap();
        let s = statuses(&out);
        assert!(s[..19].iter().all(|&x| x == StationStatus::Downtime), "{s:?}");
        assert!(s[19..].iter().all(|&x| x == StationStatus::Idle));
        // One worker track across the dropout.
        let starts = out.stations[0]
            .events
            .iter()
            .filter(|e| e.kind == crate::tracker::EventKind::Started)
            .count();
        assert_eq!(starts, 1);
    }

    #[test]
    fn single_frame_flicker_never_confirms() {
        let c = cfg(1);
        let mut pattern = vec![(false, false); 5];
        pattern[2] = (true, false);
        let out = analyze_frames(&c, frames(&pattern), opts(&c)).unwrap();
        assert!(statuses(&out).iter().all(|&x| x == StationStatus::Idle));
        assert!(out.stations[0].events.iter().all(|e| e.kind == crate::tracker::EventKind::Started));
    }

    #[test]
    fn unknown_station_counted() {
        let c = cfg(3);
        let mut f = frames(&[(true, true); 4]);
        f[1].station_id = "Z".into();
        let out = analyze_frames(&c, f, opts(&c)).unwrap();
        assert_eq!(out.counts, RecordCounts { lines: 4, malformed: 0, used: 3, out_of_scope: 1 });
    }

    #[test]
    fn out_of_order_skipped_when_lenient_and_fatal_when_strict() {
        let c = cfg(3);
        let mut f = frames(&[(true, true); 6]);
        f.swap(2, 3);
        let out = analyze_frames(&c, f.clone(), opts(&c)).unwrap();
        assert_eq!(out.counts.out_of_scope, 1);
        assert_eq!(out.counts.used, 5);
        let mut a = Analyzer::new(&c, opts(&c), 1, true).unwrap();
        let err = f.into_iter().map(|x| a.push(x)).find(Result::is_err).unwrap().unwrap_err();
        assert!(err.to_string().starts_with("ingest:"));
    }

    #[test]
    fn job_count_does_not_change_results() {
        let mut c = cfg(3);
        c.stations.push(StationConfig::new("D"));
        let mut all = frames(&[(true, true), (true, false), (false, true)].repeat(30));
        let mut d = all.clone();
        for f in &mut d {
            f.station_id = "D".into();
        }
        all.extend(d);
        let run = |jobs| {
            let mut a = Analyzer::new(&c, opts(&c), jobs, false).unwrap();
            for f in all.clone() {
                a.push(f).unwrap();
            }
            a.finish(all.len() as u64, 0).unwrap()
        };
        let (one, two) = (run(1), run(2));
        assert_eq!(one.stations.len(), 2);
        for (a, b) in one.stations.iter().zip(&two.stations) {
            assert_eq!(a.station_id, b.station_id);
            assert_eq!(a.events, b.events);
            assert_eq!(a.timeline, b.timeline);
        }
    }
}
