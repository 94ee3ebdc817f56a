//! The presence-to-state table and the majority filter that suppresses one-frame flicker.
//!
//! Run with `cargo run --example station_states`.

use std::sync::Arc;

use capacon::ingest::Scope;
use capacon::statemach::{classify, classify_bools, debounce, PresenceFlags};
use chrono::{Duration, TimeZone, Utc};

fn main() {
    for scope in [Scope::InShift, Scope::Break, Scope::OffShift] {
        for worker in [true, false] {
            for chair in [true, false] {
                println!("{scope:?} worker={worker:<5} chair={chair:<5} -> {}", classify_bools(worker, chair, scope).as_str());
            }
        }
    }

    let t0 = Utc.with_ymd_and_hms(2023, 7, 3, 12, 0, 0).unwrap();
    let station: Arc<str> = Arc::from("A");
    let raw: Vec<PresenceFlags> = "WWWCWWW"
        .chars()
        .enumerate()
        .map(|(i, c)| PresenceFlags {
            worker_present: true,
            chair_present: c == 'C',
            timestamp: t0 + Duration::seconds(i as i64),
            station_id: station.clone(),
        })
        .collect();
    let smooth = debounce(&raw, 3).expect("odd window");
    let show = |fs: &[PresenceFlags]| -> String {
        fs.iter().map(|f| classify(f, Scope::InShift).as_str().chars().next().unwrap()).collect()
    };
    println!("raw      {}", show(&raw));
    println!("filtered {}", show(&smooth));
}
