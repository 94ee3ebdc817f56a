//! Build the bundled station scenario and print what its ground truth says.
//!
//! Run with `cargo run --release --example synthetic_fixture -- [weeks]`.

use capacon::analytics::PeriodKind;
use capacon::simgen::{self, FixtureLayout};
use capacon::StationStatus;

fn main() {
    let weeks = std::env::args().nth(1).map_or(2, |w| w.parse().expect("weeks must be an integer"));
    let script = FixtureLayout { weeks, ..Default::default() }.script();
    let truth = simgen::oracle(&script).expect("fixture is valid");
    println!(
        "station {} from {} to {}: {} intervals, {} frames at {} fps",
        script.station_id,
        script.start_date,
        script.end_date,
        script.intervals.len(),
        truth.metadata.frames,
        script.frame_rate
    );
    for share in truth.shares.iter().filter(|s| matches!(s.period_kind, PeriodKind::All | PeriodKind::IsoWeek)) {
        let pct = share.pct.as_ref().expect("in-shift frames exist");
        println!(
            "{:>9}: productive {:.1}  unproductive {:.1}  downtime {:.1}  idle {:.1}",
            share.period,
            pct[&StationStatus::Productive],
            pct[&StationStatus::Unproductive],
            pct[&StationStatus::Downtime],
            pct[&StationStatus::Idle]
        );
    }
    let secs: Vec<f64> = truth.cycles.iter().filter_map(|c| c.sampled_seconds).collect();
    let short = secs.iter().filter(|&&s| s < 120.0).count();
    println!("{} chair visits, {} shorter than two minutes", secs.len(), short);
}
