use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn capacon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capacon"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SCRIPT: &str = r#"
station_id = "A"
frame_rate = 1.0
start_date = "2023-07-03"
end_date = "2023-07-04"
include_breaks = false

[calendar]
shift_start = "07:00:00"
shift_end = "08:00:00"
timezone = "UTC"

[noise]
miss_prob = 0.05
jitter_px = 2.0
seed = 3

[[intervals]]
start = "2023-07-03T07:00:00Z"
end = "2023-07-03T07:30:00Z"
worker = true
chair = "c1"

[[intervals]]
start = "2023-07-03T07:30:00Z"
end = "2023-07-03T07:45:00Z"
worker = false
chair = "c2"
"#;

fn simulate(dir: &Path) {
    let script = dir.join("script_in.toml");
    fs::write(&script, SCRIPT).unwrap();
    let o = capacon(&["simulate", "--config", s(&script), "--out", s(dir), "--write-truth"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_analyze_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let out = dir.path().join("out");
    let o = capacon(&[
        "analyze",
        "--config",
        s(&dir.path().join("config.toml")),
        "--out",
        s(&out),
        "--write-timeline",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["shares.csv", "cycles.csv", "weekly_box.csv", "report.json", "events.jsonl", "timeline.jsonl", "run_manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let shares = fs::read(out.join("shares.csv")).unwrap();
    let cycles = fs::read(out.join("cycles.csv")).unwrap();

    let again = dir.path().join("again");
    let o = capacon(&[
        "report",
        "--config",
        s(&dir.path().join("config.toml")),
        "--input",
        s(&out),
        "--out",
        s(&again),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(again.join("shares.csv")).unwrap(), shares);
    assert_eq!(fs::read(again.join("cycles.csv")).unwrap(), cycles);
}

#[test]
fn eval_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let out = dir.path().join("eval");
    let o = capacon(&[
        "eval",
        "--input",
        s(&dir.path().join("stream.jsonl")),
        "--truth",
        s(&dir.path().join("truth.jsonl")),
        "--out",
        s(&out),
        "--model-tag",
        "sim",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("eval.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model_tag,class,P,R,mAP50,mAP50_95");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("sim,worker,1.0000,"));
}

#[test]
fn missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let o = capacon(&[
        "analyze",
        "--config",
        s(&dir.path().join("config.toml")),
        "--input",
        s(&dir.path().join("nope.jsonl")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn duplicate_station_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(
        &cfg,
        "[[stations]]\nstation_id = \"A\"\n[[stations]]\nstation_id = \"A\"\n\
         [calendar]\nshift_start = \"07:00:00\"\nshift_end = \"15:00:00\"\ntimezone = \"UTC\"\n",
    )
    .unwrap();
    let o = capacon(&["analyze", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("duplicate"));
}

#[test]
fn strict_mode_rejects_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let stream = dir.path().join("stream.jsonl");
    let mut text = fs::read_to_string(&stream).unwrap();
    text.push_str("{not json\n");
    fs::write(&stream, text).unwrap();
    let cfg = dir.path().join("config.toml");
    let lenient = capacon(&["analyze", "--config", s(&cfg)]);
    assert_eq!(code(&lenient), 0);
    let strict = capacon(&["analyze", "--config", s(&cfg), "--strict"]);
    assert_eq!(code(&strict), 2);
}

#[test]
fn zero_length_simulation_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("empty.toml");
    let text = SCRIPT.replace("end_date = \"2023-07-04\"", "end_date = \"2023-07-03\"");
    let text = &text[..text.find("[[intervals]]").unwrap()];
    fs::write(&script, text).unwrap();
    let o = capacon(&["simulate", "--config", s(&script), "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(dir.path().join("stream.jsonl")).unwrap(), b"");
}

#[test]
fn invalid_script_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("bad.toml");
    fs::write(&script, SCRIPT.replace("frame_rate = 1.0", "frame_rate = -1.0")).unwrap();
    let o = capacon(&["simulate", "--config", s(&script), "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
}

#[test]
fn strict_out_of_order_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let stream = dir.path().join("stream.jsonl");
    let text = fs::read_to_string(&stream).unwrap();
    let first = text.lines().next().unwrap().to_string();
    fs::write(&stream, format!("{text}{first}\n")).unwrap();
    let cfg = dir.path().join("config.toml");
    assert_eq!(code(&capacon(&["analyze", "--config", s(&cfg)])), 0);
    let strict = capacon(&["analyze", "--config", s(&cfg), "--strict"]);
    assert_eq!(code(&strict), 3);
    let msg = String::from_utf8_lossy(&strict.stderr);
    assert!(msg.contains("ingest") && msg.contains("frame"), "{msg}");
}

#[test]
fn noiseless_report_matches_oracle_and_manifest_reconciles() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("clean.toml");
    fs::write(&script, SCRIPT.replace("miss_prob = 0.05", "miss_prob = 0.0").replace("jitter_px = 2.0", "jitter_px = 0.0"))
        .unwrap();
    let o = capacon(&["simulate", "--config", s(&script), "--out", s(dir.path())]);
    assert_eq!(code(&o), 0);
    let stream = dir.path().join("stream.jsonl");
    let mut text = fs::read_to_string(&stream).unwrap();
    text.push_str("garbage\n");
    text.push_str(r#"{"station":"Z","ts":"2023-07-03T07:00:00.000Z","frame":0,"dets":[]}"#);
    text.push('\n');
    fs::write(&stream, text).unwrap();
    let out = dir.path().join("out");
    let o = capacon(&["analyze", "--config", s(&dir.path().join("config.toml")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let json = |p: &Path| -> serde_json::Value { serde_json::from_slice(&fs::read(p).unwrap()).unwrap() };
    let oracle = json(&dir.path().join("oracle.json"));
    let report = json(&out.join("report.json"));
    let ours = report["stations"][0]["shares"].as_array().unwrap();
    let truth = oracle["shares"].as_array().unwrap();
    assert_eq!(ours.len(), truth.len());
    for t in truth {
        let r = ours
            .iter()
            .find(|r| r["period_kind"] == t["period_kind"] && r["period"] == t["period"])
            .unwrap_or_else(|| panic!("period {t} missing"));
        assert_eq!(r["counts"], t["counts"], "{}", t["period"]);
    }

    let m = json(&out.join("run_manifest.json"));
    let c = &m["counts"];
    let n = |k: &str| c[k].as_u64().unwrap();
    assert_eq!(n("lines"), n("used") + n("malformed") + n("out_of_scope"));
    assert_eq!((n("malformed"), n("out_of_scope")), (1, 1));
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}
