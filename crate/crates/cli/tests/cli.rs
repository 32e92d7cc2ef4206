//! Drives the installed binary end to end over the bundled fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(format!("{name}.json"))
}

fn widthplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_widthplan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

#[test]
fn deterministic_mode_without_a_seed_is_refused() {
    let out = widthplan(&["plan", fixture("chainline_01").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("requires --seed"));
}

#[test]
fn solved_report_round_trips_through_validate() {
    let dir = std::env::temp_dir().join(format!("widthplan-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let report = dir.join("report.json");

    let out = widthplan(&[
        "plan",
        fixture("relay_03").to_str().unwrap(),
        "--heuristic",
        "f2",
        "--seed",
        "11",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(doc["solved"], serde_json::Value::Bool(true));
    assert!(doc["plan"].as_array().is_some_and(|p| !p.is_empty()));

    let out = widthplan(&[
        "validate",
        fixture("relay_03").to_str().unwrap(),
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("valid"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unsolvable_problems_exit_one() {
    let out = widthplan(&[
        "plan",
        fixture("unsolv_01").to_str().unwrap(),
        "--k",
        "unbounded",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&out), 1);
    let doc: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(doc["solved"], serde_json::Value::Bool(false));
}

#[test]
fn rejected_plans_exit_one_and_name_the_step() {
    let dir = std::env::temp_dir().join(format!("widthplan-cli-bad-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let plan = dir.join("plan.json");
    std::fs::write(&plan, r#"[{"agent": "runner", "action": "cross_finish"}]"#).unwrap();
    let out = widthplan(&[
        "validate",
        fixture("chainline_01").to_str().unwrap(),
        plan.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("step 0"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn width_profile_separates_the_bounds() {
    let out = widthplan(&["width-profile", fixture("pairlock_01").to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let doc: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(doc["coverage_k1_percent"], serde_json::json!(0.0));
    assert_eq!(doc["coverage_k2_percent"], serde_json::json!(100.0));
}

#[test]
fn bench_emits_the_coverage_matrix() {
    let root = std::env::temp_dir().join(format!("widthplan-cli-bench-{}", std::process::id()));
    let dir = root.join("problems");
    std::fs::create_dir_all(&dir).unwrap();
    for name in ["chainline_01", "unsolv_01"] {
        std::fs::copy(fixture(name), dir.join(format!("{name}.json"))).unwrap();
    }
    let config = root.join("bench.json");
    std::fs::write(
        &config,
        r#"{"heuristics": ["hff", "f1"], "k": "2", "mode": "det", "seed": 5, "repeats": 2}"#,
    )
    .unwrap();
    let out = widthplan(&[
        "bench",
        dir.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8_lossy(&out.stdout);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("problem,hff,f1"));
    assert_eq!(lines.next(), Some("chainline_01,1,1"));
    assert_eq!(lines.next(), Some("unsolv_01,0,0"));
    std::fs::remove_dir_all(&root).ok();
}
