//! Parse detection lines and place their timestamps on a working calendar.
//!
//! Run with `cargo run --example calendar_scopes`.

use capacon::ingest::{parse_frame_line, ShiftCalendar};

fn main() {
    let lines = [
        r#"{"station":"C","ts":"2023-07-03T11:00:00.000Z","frame":0,"dets":[{"cls":"worker","box":[160,200,80,200],"conf":0.93}]}"#,
        r#"{"station":"C","ts":"2023-07-03T13:10:00.000Z","frame":1,"dets":[]}"#,
        r#"{"station":"C","ts":"2023-11-06T12:10:00.000Z","frame":2,"dets":[]}"#,
        r#"{"station":"C","ts":"not a time","frame":3,"dets":[]}"#,
    ];
    // Local wall clock: the same UTC instant lands in a different slot after the DST change.
    let cal = ShiftCalendar::single_morning_shift("America/Toronto")
        .resolve()
        .expect("valid calendar");
    for (i, line) in lines.iter().enumerate() {
        match parse_frame_line(line, i + 1) {
            Ok(f) => {
                let local = f.timestamp.with_timezone(&cal.tz());
                println!(
                    "frame {} at {} local -> {:?} ({} detections)",
                    f.frame_index,
                    local.format("%Y-%m-%d %H:%M"),
                    cal.scope_of(&f.timestamp),
                    f.detections.len()
                );
            }
            Err(m) => println!("skipped: {m}"),
        }
    }
}
