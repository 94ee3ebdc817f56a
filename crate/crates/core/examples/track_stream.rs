//! Run the multi-object tracker over a short noisy synthetic stream and print its lifecycle events.
//!
//! Run with `cargo run --example track_stream`.

use capacon::simgen::{self, Interval, NoiseModel, ScenarioScript};
use capacon::tracker::{StationTracker, TrackerParams};
use capacon::ShiftCalendar;
use chrono::{NaiveDate, TimeZone, Utc};

fn main() {
    let at = |h, m| Utc.with_ymd_and_hms(2023, 7, 3, h, m, 0).unwrap();
    let script = ScenarioScript {
        station_id: "A".into(),
        frame_rate: 1.0,
        start_date: NaiveDate::from_ymd_opt(2023, 7, 3).unwrap(),
        end_date: NaiveDate::from_ymd_opt(2023, 7, 4).unwrap(),
        include_breaks: false,
        calendar: ShiftCalendar::single_morning_shift("UTC"),
        noise: NoiseModel { miss_prob: 0.1, jitter_px: 2.0, seed: 7, ..Default::default() },
        intervals: vec![
            Interval { start: at(7, 0), end: at(7, 4), worker: true, chair: Some("c1".into()) },
            Interval { start: at(7, 4), end: at(7, 9), worker: true, chair: Some("c2".into()) },
            Interval { start: at(7, 9), end: at(7, 10), worker: true, chair: None },
        ],
    };
    let mut tracker = StationTracker::new("A", script.frame_rate, TrackerParams::default());
    let mut frames = 0;
    // Only the first ten minutes carry anything; stop once the scene has emptied.
    for frame in simgen::frames(&script).expect("valid script").take(12 * 60) {
        for e in tracker.step(&frame).expect("finite boxes") {
            println!("{} {:<9} #{} {:?}", e.timestamp.format("%H:%M:%S"), format!("{:?}", e.kind), e.track_id, e.class);
        }
        frames += 1;
    }
    for e in tracker.finish() {
        println!("{} {:<9} #{} {:?} (stream end)", e.timestamp.format("%H:%M:%S"), format!("{:?}", e.kind), e.track_id, e.class);
    }
    println!("{frames} frames processed");
}
