use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn acat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acat")).args(args).env_remove("ACAT_PORT").output().expect("spawn acat")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn log_records(path: &Path) -> Vec<Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn healthy_run_exits_zero_with_25_measurements() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.jsonl");
    let out = acat(&["run", "--log", log.to_str().unwrap(), "--speed", "max"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let measurements: Vec<u64> = log_records(&log)
        .iter()
        .filter(|r| r["source"] == "goniometry" && r["kind"] == "measurement")
        .map(|r| r["payload"]["part_id"].as_u64().unwrap())
        .collect();
    assert_eq!(measurements, (1..=25).collect::<Vec<_>>());
}

#[test]
fn estop_mid_run_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(
        dir.path(),
        "estop.json",
        r#"{"name":"estop mid-run","injections":[{"t_us":300000000,"kind":"estop_press"}]}"#,
    );
    let out = acat(&["run", "--scenario", &scenario]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn stop_mid_run_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(dir.path(), "stop.json", r#"{"injections":[{"t_us":120000000,"kind":"stop_press"}]}"#);
    let out = acat(&["run", "--scenario", &scenario]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_scenario_reports_field_and_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(dir.path(), "bad.json", "{\n  \"seed\": 1,\n  \"layout\": {\"columns\": \"five\"}\n}");
    let out = acat(&["run", "--scenario", &scenario]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("layout.columns"), "{err}");
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn flag_misuse_is_usage_error() {
    let out = acat(&["run", "--speeed", "max"]);
    assert_eq!(code(&out), 64);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(code(&acat(&["fit", "profile.csv"])), 64);
    assert_eq!(code(&acat(&["--help"])), 0);
}

#[test]
fn fit_exact_sixty_degree_profile() {
    // Circle of radius 2 mm cut by y=0 at 60 degrees: centre at y = -2 cos 60.
    let (r, theta) = (2.0_f64, 60f64.to_radians());
    let cy = -r * theta.cos();
    let mut text = String::from("x_mm,y_mm\n");
    for i in 0..=40 {
        let psi = -theta + 2.0 * theta * f64::from(i) / 40.0;
        text.push_str(&format!("{:.15},{:.15}\n", r * psi.sin(), cy + r * psi.cos()));
    }
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "drop.csv", &text);
    let out = acat(&["fit", &file, "--baseline-y", "0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("contact_angle_deg") && l.ends_with("60.000")), "{stdout}");

    let out = acat(&["fit", &file, "--baseline-y", "0", "--format", "json"]);
    let fit: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((fit["contact_angle_deg"].as_f64().unwrap() - 60.0).abs() < 1e-9);
    assert!((fit["radius"].as_f64().unwrap() - r).abs() < 1e-9);
}

#[test]
fn fit_rejects_garbage_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "bad.csv", "x_mm,y_mm\n0,1\n1,oops\n");
    let out = acat(&["fit", &file, "--baseline-y", "0"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn check_bom_fixture_passes() {
    let fixture = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/drawing_bom.csv");
    let out = acat(&["check-bom", fixture]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));

    let out = acat(&["check-bom", fixture, "--format", "json"]);
    assert_eq!(code(&out), 0);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["summary"]["fail"], 0);
}

#[test]
fn check_bom_undersized_fuse_fails() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "bom.csv", "id,rating_a,class,branch,load_a\nFU-1,3,CLASS J,POWER,3\n");
    let out = acat(&["check-bom", &file]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("fuse-125"));
}

#[test]
fn scenario_command_round_trips() {
    let out = acat(&["scenario"]);
    assert_eq!(code(&out), 0);
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "default.json", &String::from_utf8(out.stdout).unwrap());
    let log = dir.path().join("a.jsonl");
    assert_eq!(code(&acat(&["run", "--scenario", &file, "--log", log.to_str().unwrap()])), 0);
}
