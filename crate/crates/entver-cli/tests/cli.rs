//! End-to-end tests of the `entver` binary: exit codes, file outputs and
//! byte-identical reproducibility across parallelism degrees.

use std::process::{Command, Output};

fn entver(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_entver"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

#[test]
fn bundled_run_exits_zero_and_writes_reports() {
    let dir = tempdir("bundled");
    let out = entver(&["run", "--out", dir.to_str().unwrap()], &[]);
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.join("report.jsonl").exists());
    assert!(dir.join("report.csv").exists());
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("CRITERIA VIOLATION DEMOS"));
    assert!(table.contains("werner-half-teleport"));
}

#[test]
fn jsonl_is_byte_identical_across_parallelism() {
    let d1 = tempdir("jobs1");
    let d4 = tempdir("jobs4");
    let o1 = entver(&["run", "--out", d1.to_str().unwrap(), "--jobs", "1"], &[]);
    let o4 = entver(&["run", "--out", d4.to_str().unwrap(), "--jobs", "4"], &[]);
    assert!(o1.status.success() && o4.status.success());
    let j1 = std::fs::read(d1.join("report.jsonl")).unwrap();
    let j4 = std::fs::read(d4.join("report.jsonl")).unwrap();
    assert_eq!(j1, j4, "jsonl differs between --jobs 1 and --jobs 4");
    let c1 = std::fs::read(d1.join("report.csv")).unwrap();
    let c4 = std::fs::read(d4.join("report.csv")).unwrap();
    assert_eq!(c1, c4);
}

#[test]
fn jobs_env_fallback_is_honored() {
    let dir = tempdir("jobs-env");
    let out = entver(
        &["run", "--out", dir.to_str().unwrap()],
        &[("ENTVER_JOBS", "2")],
    );
    assert!(out.status.success());
}

#[test]
fn empty_scenario_list_exits_two() {
    let dir = tempdir("empty");
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, r#"{"master_seed": 1, "scenarios": []}"#).unwrap();
    let out = entver(
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempdir("malformed");
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    let out = entver(
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn custom_config_runs_and_mismatch_exits_one() {
    let dir = tempdir("mismatch");
    let cfg = dir.join("cfg.json");
    // A singlet source certified by CHSH, but the config *expects* refusal.
    std::fs::write(
        &cfg,
        r#"{
          "master_seed": 5,
          "scenarios": [
            {
              "name": "wrong-expectation",
              "source": {"kind": "werner", "alpha": 1.0},
              "protocol": {"kind": "chsh", "mode": "compliant"},
              "shots": 0,
              "expected": "refuse"
            }
          ]
        }"#,
    )
    .unwrap();
    let out = entver(
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn thresholds_command_reports_two_thirds_for_t() {
    let out = entver(
        &[
            "thresholds",
            "--ensemble",
            "T",
            "--restarts",
            "6",
            "--max-iter",
            "250",
        ],
        &[],
    );
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let value: f64 = text
        .split("F~ = ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .expect("threshold printed");
    assert!((value - 2.0 / 3.0).abs() < 1e-3, "F~ = {value}");
}

#[test]
fn thresholds_rejects_unknown_ensemble() {
    let out = entver(&["thresholds", "--ensemble", "Q"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bundled_config_prints_valid_json() {
    let out = entver(&["bundled-config"], &[]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["scenarios"].as_array().unwrap().len() >= 20);
}

fn tempdir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("entver-cli-test-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
