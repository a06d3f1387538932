use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path
}

fn lanechange(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanechange"))
        .args(args)
        .env("LANECHANGE_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn seed_sweep_writes_one_trace_per_seed() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "short.json", r#"{"name": "short", "duration_s": 2}"#);
    let out = dir.path().join("out");
    let o = lanechange(&["--config", s(&config), "--out", s(&out), "--seeds", "5", "--seed-base", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for seed in 7..12 {
        let trace = out.join(format!("runs/short_frozen_seed{seed}.trace.csv"));
        let text = std::fs::read_to_string(&trace).unwrap();
        assert!(text.starts_with("frame,t,x,y"));
        assert_eq!(text.lines().count(), 21);
        assert!(out.join(format!("runs/short_frozen_seed{seed}.summary.json")).exists());
    }
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 6);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"], 5);
    assert_eq!(summary["collisions"], 0);
    let resolved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 7);
}

#[test]
fn missing_predictor_binary() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", r#"{"duration_s": 1}"#);
    let out = dir.path().join("out");
    let args = ["--config", s(&config), "--out", s(&out), "--predictor", "external", "--predictor-cmd", "/nonexistent/predictor"];
    assert_eq!(lanechange(&args).status.code(), Some(3));

    let mut with_fallback = args.to_vec();
    with_fallback.push("--fallback-frozen");
    let o = lanechange(&with_fallback);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["predictor_fallback"], true);

    // external without a command line
    let o = lanechange(&["--config", s(&config), "--out", s(&out), "--predictor", "external"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("nope.json");
    assert_eq!(lanechange(&["--config", s(&missing), "--out", s(&out)]).status.code(), Some(2));

    let broken = write_config(dir.path(), "broken.json", "{ \"duration_s\": ");
    assert_eq!(lanechange(&["--config", s(&broken), "--out", s(&out)]).status.code(), Some(2));

    let invalid = write_config(dir.path(), "invalid.json", r#"{"duration_s": -5}"#);
    assert_eq!(lanechange(&["--config", s(&invalid), "--out", s(&out)]).status.code(), Some(2));

    let typo = write_config(dir.path(), "typo.json", r#"{"duration_s": 1, "durration": 3}"#);
    assert_eq!(lanechange(&["--config", s(&typo), "--out", s(&out), "--strict"]).status.code(), Some(2));
    assert_eq!(lanechange(&["--config", s(&typo), "--out", s(&out)]).status.code(), Some(0));
}

#[test]
fn collision_exits_4() {
    let dir = TempDir::new().unwrap();
    // a stalled car 12 m ahead of an ego at 27 m/s cannot be avoided
    let config = write_config(
        dir.path(),
        "crash.json",
        r#"{"name": "crash", "duration_s": 5, "lane_changes": false,
            "traffic": {"density": 0, "vehicles": [{"lane": 1, "x": 12, "speed": 0}]}}"#,
    );
    let out = dir.path().join("out");
    let o = lanechange(&["--config", s(&config), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stdout));
    let events = std::fs::read_to_string(out.join("runs/crash_frozen_seed0.events.jsonl")).unwrap();
    assert!(events.contains("collision"));
}

#[test]
fn compare_writes_paired_table() {
    if Command::new("python3").arg("--version").output().is_err() {
        eprintln!("python3 not available, skipping");
        return;
    }
    let dir = TempDir::new().unwrap();
    let server = dir.path().join("predictor.py");
    std::fs::write(
        &server,
        r#"import json, sys
for line in sys.stdin:
    req = json.loads(line)
    rows = sorted(r for r in req["history"] if r[1] == req["target"])
    (_, _, x0, y0), (_, _, x1, y1) = rows[-2], rows[-1]
    vx, vy = (x1 - x0) / 0.1, (y1 - y0) / 0.1
    traj = [[x1 + vx * 0.1 * k, y1 + vy * 0.1 * k] for k in range(1, 51)]
    print(json.dumps({"id": req["id"], "trajectory": traj}), flush=True)
"#,
    )
    .unwrap();
    let config = write_config(dir.path(), "c.json", r#"{"name": "cmp", "duration_s": 6}"#);
    let out = dir.path().join("out");
    let cmd = format!("python3 {}", s(&server));
    let o = lanechange(&["--config", s(&config), "--out", s(&out), "--seeds", "2", "--compare", "--predictor-cmd", &cmd]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    let mut lines = table.lines();
    assert!(lines.next().unwrap().starts_with("seed,frozen_mean_speed,external_mean_speed,mean_speed_delta"));
    assert_eq!(lines.count(), 2);
    for stem in ["cmp_frozen_seed0", "cmp_external_seed0", "cmp_frozen_seed1", "cmp_external_seed1"] {
        assert!(out.join(format!("runs/{stem}.trace.csv")).exists(), "{stem}");
    }
}
