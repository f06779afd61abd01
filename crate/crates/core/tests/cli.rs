use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn flexcon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flexcon")).args(args).output().expect("binary runs")
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn config(name: &str) -> String {
    root().join("configs").join(name).to_string_lossy().into_owned()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn plan_writes_outputs_and_reaches_goal() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = flexcon(&["plan", "--config", &config("triangle_goal.json"), "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout_json(&o);
    assert_eq!(s["termination"], "reached");
    assert_eq!(s["reached"], true);
    for f in ["steps.csv", "summary.json", "position_error.csv", "normalized_wrench.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let header = fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    let first = header.lines().next().unwrap();
    assert_eq!(first, flexcon::cli::STEPS_HEADER.join(","));
}

#[test]
fn plan_outputs_are_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = flexcon(&["plan", "--config", &config("triangle_boundary.json"), "--out", d.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(read_dir_sorted(a.path()), read_dir_sorted(b.path()));
}

#[test]
fn explore_outputs_are_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o =
            flexcon(&["explore", "--config", &config("membrane_reentry.json"), "--out", d.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        let s = stdout_json(&o);
        assert_eq!(s["regions"], 2);
    }
    assert_eq!(read_dir_sorted(a.path()), read_dir_sorted(b.path()));
}

#[test]
fn tight_force_limit_stalls_at_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let o = flexcon(&["plan", "--config", &config("triangle_tight_limit.json"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout_json(&o);
    assert_eq!(s["termination"], "boundary_stall");
    assert_eq!(s["reached"], false);
}

#[test]
fn verify_accepts_planner_log() {
    let dir = tempfile::tempdir().unwrap();
    let o = flexcon(&["plan", "--config", &config("triangle_boundary.json"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let steps = dir.path().join("steps.csv");
    let v = flexcon(&["verify", "--input", steps.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(0), "{}", String::from_utf8_lossy(&v.stdout));
    assert_eq!(stdout_json(&v)["violations"], serde_json::json!([]));
}

#[test]
fn identify_fixtures_from_the_command_line() {
    for (file, want) in [
        ("line_spring.json", "LinearSpringConstraint"),
        ("flexible_hinge.json", "FlexibleHinge"),
        ("membrane.json", "Membrane"),
    ] {
        let path = root().join("fixtures").join(file);
        let o = flexcon(&["identify", "--input", path.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        assert_eq!(stdout_json(&o)["label"]["label"], want);
    }
}

#[test]
fn identify_with_shipped_thresholds_matches_defaults() {
    let th = root().join("configs/thresholds.json");
    let text = fs::read_to_string(&th).unwrap();
    let parsed: flexcon::classifier::ClassifierThresholds = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, flexcon::classifier::ClassifierThresholds::default());
    let path = root().join("fixtures/flexible_hinge.json");
    let o = flexcon(&["identify", "--input", path.to_str().unwrap(), "--thresholds", th.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout_json(&o)["label"]["label"], "FlexibleHinge");
}

#[test]
fn malformed_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let unknown = dir.path().join("unknown.json");
    fs::write(&unknown, r#"{"scenario": "pendulum", "goal": {"planar": [0, 0, 0]}}"#).unwrap();
    let extra = dir.path().join("extra.json");
    fs::write(&extra, r#"{"scenario": "membrane", "colour": 3}"#).unwrap();
    let missing = dir.path().join("absent.json");
    let cases: Vec<Vec<&str>> = vec![
        vec!["plan", "--config", bad.to_str().unwrap()],
        vec!["plan", "--config", unknown.to_str().unwrap()],
        vec!["explore", "--config", extra.to_str().unwrap()],
        vec!["identify", "--input", missing.to_str().unwrap()],
        vec!["plan"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let o = flexcon(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn plan_without_goal_is_invalid() {
    let o = flexcon(&["plan", "--config", &config("membrane_static.json")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_flags_barrier_violations() {
    let dir = tempfile::tempdir().unwrap();
    let o = flexcon(&["plan", "--config", &config("triangle_goal.json"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let col = header.iter().position(|h| *h == "c2").expect("barrier column");
    let mut row: Vec<String> = lines[2].split(',').map(str::to_string).collect();
    row[col] = "inf".into();
    lines[2] = row.join(",");
    let tampered = dir.path().join("tampered.csv");
    fs::write(&tampered, lines.join("\n") + "\n").unwrap();
    let v = flexcon(&["verify", "--input", tampered.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(1));
    assert_eq!(stdout_json(&v)["violations"], serde_json::json!([1]));
}
