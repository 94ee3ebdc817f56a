//! Simulate a station, analyze the stream and compare the report against the simulator's ground truth.
//!
//! Run with `cargo run --release --example end_to_end`.

use capacon::analytics::PeriodKind;
use capacon::cli::{cmd_analyze, cmd_simulate, AnalyzeArgs, SimulateArgs};
use capacon::simgen::OracleTruth;
use capacon::StationStatus;

fn main() {
    let dir = std::env::temp_dir().join(format!("capacon-e2e-{}", std::process::id()));
    let sim = cmd_simulate(&SimulateArgs {
        config: None,
        fixture: Some("reference".into()),
        weeks: Some(2),
        out: dir.clone(),
        seed: Some(11),
        miss_prob: Some(0.1),
        jitter_px: Some(2.0),
        write_truth: false,
    })
    .expect("simulate");
    println!("wrote {} frames to {}", sim.frames, sim.stream.display());

    let run = cmd_analyze(&AnalyzeArgs {
        config: sim.config.clone(),
        input: vec![],
        out: None,
        jobs: 1,
        strict: false,
        debounce: None,
        min_cycle_seconds: None,
        write_timeline: false,
    })
    .expect("analyze");

    let truth: OracleTruth = serde_json::from_slice(&std::fs::read(&sim.oracle).unwrap()).unwrap();
    let expected = truth.share(PeriodKind::All, "all").unwrap().pct.clone().unwrap();
    let measured = run.bundle.stations[0].overall().expect("all-period tally").shares().unwrap();
    for (i, s) in StationStatus::IN_SHIFT.iter().enumerate() {
        println!("{:<12} truth {:5.1}  measured {:6.2}", s.as_str(), expected[s], 100.0 * measured[i]);
    }
    for (week, b) in &run.bundle.stations[0].weekly {
        println!("{}-W{:02} median cycle {:.2} min over {} cycles", week.0, week.1, b.median, b.n);
    }
    println!("report files in {}", run.out_dir.display());
}
