//! Command-line front end. Exit codes: 1 config error, 2 input error, 3 invariant violation.

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::analytics::{extract_cycles, ReportBundle, StationReport, TallyAccumulator};
use crate::config::{ConfigError, RunConfig};
use crate::evalkit::{eval_csv, map_suite};
use crate::ingest::{
    parse_frame_line, parse_ground_truth_line, serialize_frame, serialize_ground_truth, FrameRecord, FrameStream, IngestError,
    MalformedRecord, StationConfig, Strictness,
};
use crate::pipeline::{Analyzer, PipelineError, PipelineOptions, RecordCounts};
use crate::simgen::{self, FixtureLayout, ScenarioScript, SimError};
use crate::statemach::StationStatus;
use crate::tracker::{EventKind, TrackEvent};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("invariant violation in {0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Input(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => CliError::Input(e.to_string()),
            e => CliError::Config(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match &e {
            PipelineError::Ingest(
                IngestError::Malformed(_) | IngestError::TooManyMalformed { .. } | IngestError::Io(_),
            )
            | PipelineError::UnknownStation { .. } => CliError::Input(e.to_string()),
            _ => CliError::Invariant(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn write_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("cannot write {}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "capacon", version, about = "Station productivity analytics from detection streams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track, classify and report one or more detection streams.
    Analyze(AnalyzeArgs),
    /// Score a prediction stream against ground truth.
    Eval(EvalArgs),
    /// Render a scenario script into a stream, its oracle and a matching config.
    Simulate(SimulateArgs),
    /// Rebuild report files from a saved timeline and event log.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Detection streams; overrides `io.inputs`.
    #[arg(long)]
    pub input: Vec<PathBuf>,
    /// Output directory; overrides `io.out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Abort on the first malformed or out-of-order record.
    #[arg(long)]
    pub strict: bool,
    /// Majority-filter window in frames (odd).
    #[arg(long)]
    pub debounce: Option<usize>,
    #[arg(long)]
    pub min_cycle_seconds: Option<f64>,
    /// Also write the per-frame state timeline (needed by `report`).
    #[arg(long)]
    pub write_timeline: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction stream.
    #[arg(long)]
    pub input: PathBuf,
    /// Ground-truth stream (no `conf`).
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Label for the `model_tag` column; defaults to the prediction file stem.
    #[arg(long)]
    pub model_tag: Option<String>,
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario script.
    #[arg(long, conflicts_with = "fixture", required_unless_present = "fixture")]
    pub config: Option<PathBuf>,
    /// Use a bundled scenario instead of a script.
    #[arg(long, value_parser = ["reference"])]
    pub fixture: Option<String>,
    /// Shorten the bundled scenario to this many weeks.
    #[arg(long, requires = "fixture")]
    pub weeks: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub miss_prob: Option<f64>,
    #[arg(long)]
    pub jitter_px: Option<f64>,
    /// Also write noise-free ground truth as `truth.jsonl`.
    #[arg(long)]
    pub write_truth: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory holding `timeline.jsonl` and `events.jsonl` from `analyze --write-timeline`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub min_cycle_seconds: Option<f64>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze(a) => cmd_analyze(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Simulate(a) => cmd_simulate(&a).map(|_| ()),
        Command::Report(a) => cmd_report(&a).map(|_| ()),
    }
}

#[derive(Debug, Clone, Serialize)]
struct StationManifest {
    station: String,
    frames: u64,
    dropped_boxes: usize,
    track_events: usize,
    gaps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub config_hash: String,
    pub inputs: Vec<PathBuf>,
    pub counts: RecordCounts,
    /// First few malformed lines per input.
    pub malformed_examples: Vec<String>,
    stations: Vec<StationManifest>,
    pub gaps: Vec<crate::ingest::Gap>,
}

#[derive(Debug, Serialize)]
struct TimelineRow<'a> {
    station: &'a str,
    #[serde(with = "crate::serde_ts")]
    ts: chrono::DateTime<chrono::Utc>,
    status: StationStatus,
}

#[derive(Debug, Deserialize)]
struct TimelineRowOwned {
    station: String,
    #[serde(with = "crate::serde_ts")]
    ts: chrono::DateTime<chrono::Utc>,
    status: StationStatus,
}

/// Result of `analyze`, for callers that want more than the files.
#[derive(Debug, Clone)]
pub struct AnalyzeSummary {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    pub bundle: ReportBundle,
}

fn open_lines(path: &Path) -> Result<std::io::Lines<BufReader<File>>, CliError> {
    let f = File::open(path).map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    Ok(BufReader::with_capacity(1 << 20, f).lines())
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<AnalyzeSummary, CliError> {
    let (mut cfg, hash) = RunConfig::load(&args.config)?;
    if let Some(w) = args.debounce {
        cfg.analytics.debounce_window = w;
    }
    if let Some(m) = args.min_cycle_seconds {
        cfg.analytics.min_cycle_seconds = m;
    }
    if !args.input.is_empty() {
        cfg.io.inputs = args.input.clone();
    }
    if let Some(o) = &args.out {
        cfg.io.out_dir = Some(o.clone());
    }
    cfg.validate()?;
    if cfg.io.inputs.is_empty() {
        return Err(CliError::Input("no input streams given".into()));
    }
    let out_dir = cfg
        .io
        .out_dir
        .clone()
        .ok_or_else(|| CliError::Config("no output directory given (--out or io.out_dir)".into()))?;
    let readers = cfg
        .io
        .inputs
        .iter()
        .map(|p| open_lines(p))
        .collect::<Result<Vec<_>, _>>()?;

    let strictness = if args.strict {
        Strictness::Strict
    } else {
        Strictness::Lenient {
            max_malformed_fraction: cfg.io.max_malformed_fraction,
        }
    };
    let opts = PipelineOptions {
        record_timeline: args.write_timeline,
        ..PipelineOptions::from_config(&cfg)
    };
    let mut analyzer = Analyzer::new(&cfg, opts, args.jobs.max(1), args.strict)?;
    let (mut lines, mut malformed) = (0u64, 0u64);
    let mut malformed_examples = Vec::new();
    for (path, reader) in cfg.io.inputs.iter().zip(readers) {
        let mut io_err = None;
        let mut stream = FrameStream::new(
            reader.map_while(|r| r.map_err(|e| io_err = Some(e)).ok()),
            strictness,
        );
        for item in stream.by_ref() {
            let frame = item.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            analyzer.push(frame)?;
        }
        let summary = stream
            .finish()
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if let Some(e) = io_err {
            return Err(CliError::Input(format!("reading {}: {e}", path.display())));
        }
        lines += summary.lines as u64;
        malformed += summary.malformed.len() as u64;
        malformed_examples.extend(
            summary
                .malformed
                .iter()
                .take(5)
                .map(|m: &MalformedRecord| format!("{}: {m}", path.display())),
        );
    }
    let output = analyzer.finish(lines, malformed)?;
    let bundle = output.report(&cfg)?;

    fs::create_dir_all(&out_dir).map_err(write_err(&out_dir))?;
    bundle
        .write_to(&out_dir)
        .map_err(|e| CliError::Input(format!("writing report: {e}")))?;

    let events_path = out_dir.join("events.jsonl");
    let mut w = BufWriter::new(File::create(&events_path).map_err(write_err(&events_path))?);
    for s in &output.stations {
        for e in &s.events {
            serde_json::to_writer(&mut w, e).expect("event serialization cannot fail");
            w.write_all(b"\n").map_err(write_err(&events_path))?;
        }
    }
    w.flush().map_err(write_err(&events_path))?;

    if args.write_timeline {
        let path = out_dir.join("timeline.jsonl");
        let mut w = BufWriter::new(File::create(&path).map_err(write_err(&path))?);
        for s in &output.stations {
            for &(ts, status) in s.timeline.iter().flatten() {
                let row = TimelineRow { station: &s.station_id, ts, status };
                serde_json::to_writer(&mut w, &row).expect("timeline serialization cannot fail");
                w.write_all(b"\n").map_err(write_err(&path))?;
            }
        }
        w.flush().map_err(write_err(&path))?;
    }

    let manifest = RunManifest {
        tool: concat!("capacon ", env!("CARGO_PKG_VERSION")).to_string(),
        config_hash: hash,
        inputs: cfg.io.inputs.clone(),
        counts: output.counts,
        malformed_examples,
        stations: output
            .stations
            .iter()
            .map(|s| StationManifest {
                station: s.station_id.clone(),
                frames: s.frames,
                dropped_boxes: s.dropped_boxes,
                track_events: s.events.len(),
                gaps: s.gaps.len(),
            })
            .collect(),
        gaps: output.stations.iter().flat_map(|s| s.gaps.iter().cloned()).collect(),
    };
    let path = out_dir.join("run_manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialization cannot fail");
    text.push('\n');
    fs::write(&path, text).map_err(write_err(&path))?;
    log::info!(
        "analyzed {} frames over {} stations into {}",
        output.counts.used,
        output.stations.len(),
        out_dir.display()
    );
    Ok(AnalyzeSummary {
        out_dir,
        manifest,
        bundle,
    })
}

/// Reads a whole file of frame lines with the lenient or strict policy.
fn read_frames(
    path: &Path,
    parse: fn(&str, usize) -> Result<FrameRecord, MalformedRecord>,
    strict: bool,
) -> Result<Vec<FrameRecord>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut frames = Vec::new();
    let (mut lines, mut bad) = (0usize, 0usize);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        lines += 1;
        match parse(line, i + 1) {
            Ok(f) => frames.push(f),
            Err(m) if strict => return Err(CliError::Input(format!("{}: {m}", path.display()))),
            Err(m) => {
                log::debug!("{}: {m}", path.display());
                bad += 1;
            }
        }
    }
    if bad as f64 > crate::ingest::DEFAULT_MAX_MALFORMED * lines as f64 {
        return Err(CliError::Input(format!(
            "{}: {bad} of {lines} lines malformed",
            path.display()
        )));
    }
    Ok(frames)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<PathBuf, CliError> {
    let preds = read_frames(&args.input, parse_frame_line, args.strict)?;
    let gts = read_frames(&args.truth, parse_ground_truth_line, args.strict)?;
    let summary = map_suite(&preds, &gts);
    let tag = args.model_tag.clone().unwrap_or_else(|| {
        args.input
            .file_stem()
            .map_or_else(|| "model".to_string(), |s| s.to_string_lossy().into_owned())
    });
    fs::create_dir_all(&args.out).map_err(write_err(&args.out))?;
    let csv_path = args.out.join("eval.csv");
    let body = eval_csv(&summary, &tag).map_err(|e| CliError::Input(e.to_string()))?;
    fs::write(&csv_path, body).map_err(write_err(&csv_path))?;
    let json_path = args.out.join("eval.json");
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serialization cannot fail");
    text.push('\n');
    fs::write(&json_path, text).map_err(write_err(&json_path))?;
    Ok(csv_path)
}

/// Files written by `simulate`.
#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub stream: PathBuf,
    pub oracle: PathBuf,
    pub config: PathBuf,
    pub script: PathBuf,
    pub truth: Option<PathBuf>,
    pub frames: u64,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<SimulateOutput, CliError> {
    let mut script = match (&args.config, &args.fixture) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            ScenarioScript::from_toml(&text)?
        }
        (None, Some(_)) => {
            let mut layout = FixtureLayout::default();
            if let Some(w) = args.weeks {
                layout.weeks = w;
            }
            layout.script()
        }
        (None, None) => return Err(CliError::Config("give --config or --fixture".into())),
    };
    if let Some(s) = args.seed {
        script.noise.seed = s;
    }
    if let Some(m) = args.miss_prob {
        script.noise.miss_prob = m;
    }
    if let Some(j) = args.jitter_px {
        script.noise.jitter_px = j;
    }
    let truth = simgen::oracle(&script)?;
    fs::create_dir_all(&args.out).map_err(write_err(&args.out))?;

    let stream = args.out.join("stream.jsonl");
    let mut w = BufWriter::with_capacity(1 << 20, File::create(&stream).map_err(write_err(&stream))?);
    let mut frames = 0;
    for f in simgen::frames(&script)? {
        w.write_all(serialize_frame(&f).as_bytes()).map_err(write_err(&stream))?;
        w.write_all(b"\n").map_err(write_err(&stream))?;
        frames += 1;
    }
    w.flush().map_err(write_err(&stream))?;

    let truth_path = if args.write_truth {
        let path = args.out.join("truth.jsonl");
        let mut clean = script.clone();
        clean.noise.miss_prob = 0.0;
        clean.noise.jitter_px = 0.0;
        let mut w = BufWriter::with_capacity(1 << 20, File::create(&path).map_err(write_err(&path))?);
        for f in simgen::frames(&clean)? {
            w.write_all(serialize_ground_truth(&f).as_bytes()).map_err(write_err(&path))?;
            w.write_all(b"\n").map_err(write_err(&path))?;
        }
        w.flush().map_err(write_err(&path))?;
        Some(path)
    } else {
        None
    };

    let oracle = args.out.join("oracle.json");
    fs::write(&oracle, truth.to_json()).map_err(write_err(&oracle))?;

    let script_path = args.out.join("script.toml");
    fs::write(&script_path, script.to_toml()).map_err(write_err(&script_path))?;

    let mut station = StationConfig::new(script.station_id.clone());
    station.frame_rate = script.frame_rate;
    let mut cfg = RunConfig::new(vec![station], script.calendar.clone());
    cfg.io.inputs = vec![PathBuf::from("stream.jsonl")];
    cfg.io.out_dir = Some(PathBuf::from("report"));
    let config = args.out.join("config.toml");
    fs::write(&config, cfg.to_toml()).map_err(write_err(&config))?;

    Ok(SimulateOutput {
        stream,
        oracle,
        config,
        script: script_path,
        truth: truth_path,
        frames,
    })
}

pub fn cmd_report(args: &ReportArgs) -> Result<ReportBundle, CliError> {
    let (mut cfg, _) = RunConfig::load(&args.config)?;
    if let Some(m) = args.min_cycle_seconds {
        cfg.analytics.min_cycle_seconds = m;
    }
    cfg.validate()?;
    let tz = cfg
        .calendar
        .resolve()
        .map_err(|e| CliError::Config(e.to_string()))?
        .tz();

    let mut tallies: BTreeMap<String, TallyAccumulator> = BTreeMap::new();
    let timeline = args.input.join("timeline.jsonl");
    for (i, line) in open_lines(&timeline)?.enumerate() {
        let line = line.map_err(|e| CliError::Input(format!("reading {}: {e}", timeline.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: TimelineRowOwned = serde_json::from_str(&line)
            .map_err(|e| CliError::Input(format!("{} line {}: {e}", timeline.display(), i + 1)))?;
        tallies
            .entry(row.station)
            .or_insert_with(|| TallyAccumulator::new(tz))
            .push(&row.ts, row.status);
    }

    let mut events: BTreeMap<String, Vec<TrackEvent>> = BTreeMap::new();
    let events_path = args.input.join("events.jsonl");
    for (i, line) in open_lines(&events_path)?.enumerate() {
        let line = line.map_err(|e| CliError::Input(format!("reading {}: {e}", events_path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: TrackEvent = serde_json::from_str(&line)
            .map_err(|e| CliError::Input(format!("{} line {}: {e}", events_path.display(), i + 1)))?;
        events.entry(ev.station_id.clone()).or_default().push(ev);
    }

    let mut stations = Vec::new();
    for (id, acc) in tallies {
        let evs = events.remove(&id).unwrap_or_default();
        debug_assert!(evs.iter().all(|e| e.kind != EventKind::Ended || e.station_id == id));
        let cycles = extract_cycles(&evs, crate::ingest::ObjectClass::Chair)
            .map_err(|e| CliError::Invariant(format!("analytics: {e}")))?;
        stations.push(StationReport::new(id, acc.into_tallies(), &cycles, cfg.analytics.min_cycle_seconds, tz));
    }
    let bundle = ReportBundle::new(stations);
    let out = args.out.clone().unwrap_or_else(|| args.input.clone());
    bundle
        .write_to(&out)
        .map_err(|e| CliError::Input(format!("writing report: {e}")))?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config(String::new()).exit_code(), 1);
        assert_eq!(CliError::Input(String::new()).exit_code(), 2);
        assert_eq!(CliError::Invariant(String::new()).exit_code(), 3);
        let e: CliError = PipelineError::Tracker(crate::tracker::TrackerError::SingularInnovation).into();
        assert_eq!(e.exit_code(), 3);
        assert!(e.to_string().contains("tracker"));
    }

    #[test]
    fn parses_flags() {
        let cli = Cli::try_parse_from([
            "capacon", "analyze", "--config", "c.toml", "--input", "a.jsonl", "--input", "b.jsonl", "--jobs", "2",
            "--strict", "--debounce", "5", "--min-cycle-seconds", "60",
        ])
        .unwrap();
        let Command::Analyze(a) = cli.command else { panic!() };
        assert_eq!(a.input.len(), 2);
        assert_eq!((a.jobs, a.strict, a.debounce, a.min_cycle_seconds), (2, true, Some(5), Some(60.0)));
        assert!(Cli::try_parse_from(["capacon", "simulate", "--out", "x"]).is_err());
        assert!(Cli::try_parse_from(["capacon", "simulate", "--fixture", "reference", "--out", "x"]).is_ok());
    }
}
