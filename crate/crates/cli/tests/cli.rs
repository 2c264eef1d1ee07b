use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.json"))
}

fn elnetsim(args: &[&str]) -> Output {
    elnetsim_env(args, None)
}

fn elnetsim_env(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_elnetsim"));
    cmd.args(args).env_remove("ELNETSIM_SEED");
    if let Some(s) = seed {
        cmd.env("ELNETSIM_SEED", s);
    }
    cmd.output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_outputs_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = elnetsim(&["run", s(&scenario("table1")), s(&scenario("pendulum_single")), "--out", s(dir.path()), "--jobs", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("PASS table1"));
    assert!(text.contains("PASS pendulum_single"));
    for f in ["table1.csv", "table1.report.json", "table1.svg", "pendulum_single.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn certify_round_trip_and_tampering() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(elnetsim(&["run", s(&scenario("table1")), "--out", s(dir.path())]).status.code(), Some(0));
    let csv = dir.path().join("table1.csv");
    let report = dir.path().join("cert.json");
    let ok = elnetsim(&["certify", s(&csv), s(&scenario("table1")), "--report", s(&report)]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(report.exists());

    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut fields: Vec<String> = lines[3000].split(',').map(str::to_string).collect();
    fields[1] = "5.0".into();
    lines[3000] = fields.join(",");
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, lines.join("\n") + "\n").unwrap();
    let fail = elnetsim(&["certify", s(&bad), s(&scenario("table1"))]);
    assert_eq!(fail.status.code(), Some(1));
    let text = stdout(&fail);
    let t: f64 = text
        .split("first violation at t = ")
        .nth(1)
        .and_then(|r| r.trim().parse().ok())
        .unwrap_or_else(|| panic!("{text}"));
    assert!((2.997..=3.0).contains(&t), "{text}");
}

#[test]
fn rates_prints_table1_beta() {
    let out = elnetsim(&["rates", s(&scenario("table1"))]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("k2   5.000000000000"));
    assert!(text.contains("k3   12.000000000000"));
    assert!(text.contains("beta 2.400000000000"));
}

#[test]
fn validate_reports_errors_with_exit_two() {
    assert_eq!(elnetsim(&["validate", s(&scenario("table1"))]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let text = std::fs::read_to_string(scenario("table1")).unwrap().replace("\"k_zeta\"", "\"k_eta\"");
    std::fs::write(&bad, text).unwrap();
    let out = elnetsim(&["validate", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/controller/gains/k_eta"));
    assert_eq!(elnetsim(&["validate", "/nonexistent.json"]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(elnetsim(&[]).status.code(), Some(2));
    assert_eq!(elnetsim(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(elnetsim(&["run", s(&scenario("table1")), "--jobs", "0"]).status.code(), Some(2));
    assert_eq!(elnetsim(&["--help"]).status.code(), Some(0));
}

#[test]
fn seed_env_overrides_random_initial_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: Option<&str>, sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = elnetsim_env(&["run", s(&scenario("ring_sync_backstepping")), "--out", s(&out_dir)], seed);
        assert_eq!(out.status.code(), Some(0));
        std::fs::read(out_dir.join("ring_sync_backstepping.csv")).unwrap()
    };
    let default = run(None, "a");
    assert_eq!(default, run(Some("2024"), "b"));
    assert_ne!(default, run(Some("99"), "c"));
    let bad = elnetsim_env(&["validate", s(&scenario("table1"))], Some("not-a-seed"));
    assert_eq!(bad.status.code(), Some(2));
}
