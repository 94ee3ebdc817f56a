//! Turn chair track events into cycle records and weekly box-plot statistics.
//!
//! Run with `cargo run --example cycle_times`.

use capacon::analytics::{extract_cycles, filter_cycles, weekly_box_stats, DEFAULT_MIN_CYCLE_SECONDS};
use capacon::tracker::{EventKind, TrackEvent};
use capacon::ObjectClass;
use chrono::{Duration, TimeZone, Utc};

fn main() {
    let t0 = Utc.with_ymd_and_hms(2023, 7, 3, 11, 0, 0).unwrap();
    let minutes = [5.0, 4.5, 6.0, 1.5, 5.5, 7.0, 5.0];
    let mut events = Vec::new();
    let mut at = t0;
    for (i, m) in minutes.iter().enumerate() {
        let end = at + Duration::milliseconds((m * 60_000.0) as i64);
        let ev = |kind, timestamp| TrackEvent {
            station_id: "A".into(),
            track_id: i as u64 + 1,
            class: ObjectClass::Chair,
            kind,
            timestamp,
        };
        events.extend([ev(EventKind::Started, at), ev(EventKind::Confirmed, at), ev(EventKind::Ended, end)]);
        at = end;
    }
    let cycles = extract_cycles(&events, ObjectClass::Chair).expect("paired events");
    let kept = filter_cycles(&cycles, DEFAULT_MIN_CYCLE_SECONDS);
    println!("{} cycles, {} at least {} s", cycles.len(), kept.len(), DEFAULT_MIN_CYCLE_SECONDS);
    for ((year, week), b) in weekly_box_stats(&kept, chrono_tz::America::Toronto) {
        println!(
            "{year}-W{week:02}: n={} min={} q1={} median={} q3={} max={} (minutes)",
            b.n, b.min, b.q1, b.median, b.q3, b.max
        );
    }
}
