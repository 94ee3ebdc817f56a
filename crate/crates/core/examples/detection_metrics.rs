//! Score noisy synthetic detections against their noise-free ground truth.
//!
//! Run with `cargo run --example detection_metrics`.

use capacon::evalkit::{average_precision, corpus_curve, eval_csv, map_suite};
use capacon::simgen::{self, FixtureLayout};
use capacon::ObjectClass;

fn main() {
    let mut script = FixtureLayout { weeks: 1, ..Default::default() }.script();
    script.end_date = script.start_date.succ_opt().unwrap();
    let truth_script = {
        let mut s = script.clone();
        s.noise.miss_prob = 0.0;
        s.noise.jitter_px = 0.0;
        s
    };
    script.noise.miss_prob = 0.05;
    script.noise.jitter_px = 12.0;
    script.noise.conf_range = (0.3, 0.99);

    let preds: Vec<_> = simgen::frames(&script).unwrap().collect();
    let gts: Vec<_> = simgen::frames(&truth_script).unwrap().collect();
    println!("{} frames", preds.len());

    for t in [0.5, 0.75, 0.9] {
        let curve = corpus_curve(&preds, &gts, ObjectClass::Worker, t);
        let ap = average_precision(&curve).expect("worker ground truth exists");
        println!("worker AP@{t}: {ap:.4}");
    }
    let summary = map_suite(&preds, &gts);
    print!("{}", String::from_utf8(eval_csv(&summary, "jitter12").unwrap()).unwrap());
}
