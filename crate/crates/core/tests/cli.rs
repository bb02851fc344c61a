use std::path::{Path, PathBuf};
use std::process::Command;

use jttsl::cli::{parse_scenario, parse_scenario_str, DRIFT_CSV, RESOLVED_SCENARIO, RMSE_CSV, SUMMARY_JSON};
use jttsl::cskf::{ConsensusMessage, MESSAGE_BYTES};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn jttsl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_jttsl")).args(args).output().expect("binary runs")
}

fn run_small(out: &Path, extra: &[&str]) -> std::process::Output {
    let scen = scenario("tree9_linear.scenario");
    let mut args = vec!["run", "--scenario", scen.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    jttsl(&args)
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn every_shipped_scenario_parses() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        parse_scenario(&entry.unwrap().path()).unwrap();
        n += 1;
    }
    assert!(n >= 2);
}

#[test]
fn run_writes_all_four_variants() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), &["--trials", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rmse = read(&dir.path().join(RMSE_CSV));
    let mut lines = rmse.lines();
    assert_eq!(lines.next(), Some("t,variant,rmse_m"));
    let mut variants: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    variants.dedup();
    assert_eq!(variants, ["jttsl", "cskf_known_drift", "centralized", "single_sensor"]);
}

#[test]
fn same_seed_gives_byte_identical_bundles() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(run_small(d.path(), &["--trials", "1", "--seed", "7"]).status.success());
    }
    for f in [DRIFT_CSV, RMSE_CSV, RESOLVED_SCENARIO] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
    let strip = |p: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&read(&p.join(SUMMARY_JSON))).unwrap();
        v.as_object_mut().unwrap().remove("wall_time_s");
        v
    };
    assert_eq!(strip(a.path()), strip(b.path()));
}

#[test]
fn variant_flag_filters_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), &["--trials", "1", "--variant", "single_sensor"]);
    assert!(out.status.success());
    let rmse = read(&dir.path().join(RMSE_CSV));
    assert!(rmse.lines().skip(1).all(|l| l.split(',').nth(1) == Some("single_sensor")));
    assert_eq!(read(&dir.path().join(DRIFT_CSV)).lines().count(), 1);
}

#[test]
fn emitted_files_reparse_and_echo_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), &["--trials", "2", "--seed", "11", "--consensus-steps", "2", "--gate-threshold", "30"]);
    assert!(out.status.success());

    let resolved = parse_scenario_str(&read(&dir.path().join(RESOLVED_SCENARIO))).unwrap();
    assert_eq!((resolved.trials, resolved.seed, resolved.consensus_steps), (2, 11, 2));
    assert_eq!(resolved.gate_threshold, Some(30.0));

    let summary: serde_json::Value = serde_json::from_str(&read(&dir.path().join(SUMMARY_JSON))).unwrap();
    assert_eq!(summary["overrides"]["trials"], 2);
    assert_eq!(summary["overrides"]["seed"], 11);
    assert_eq!(summary["overrides"]["consensus_steps"], 2);
    assert_eq!(summary["scenario"]["calibration"]["lambda"], 0.98);
    assert_eq!(summary["scenario"]["calibration"]["mode"], "gradient_per_interval");

    let drift = read(&dir.path().join(DRIFT_CSV));
    let mut lines = drift.lines();
    assert_eq!(lines.next(), Some("trial,t,edge_i,edge_j,xi_err_m,eta_err_m"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * 1000 * 16);
    for row in rows.iter().step_by(997) {
        let f: Vec<&str> = row.split(',').collect();
        for v in &f[4..] {
            let x: f64 = v.parse().unwrap();
            assert_eq!(x.to_string(), *v, "numeric fields round-trip");
        }
    }
}

#[test]
fn message_log_flag_writes_flat_records() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("messages.bin");
    let out = run_small(dir.path(), &["--trials", "1", "--variant", "jttsl", "--message-log", log.to_str().unwrap()]);
    assert!(out.status.success());
    let bytes = std::fs::read(&log).unwrap();
    assert_eq!(bytes.len(), 1000 * 9 * MESSAGE_BYTES);
    let first = ConsensusMessage::from_bytes(&bytes[..MESSAGE_BYTES]).unwrap();
    assert_eq!((first.sender.0, first.time, first.round), (1, 0, 0));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scenario");
    std::fs::write(&bad, read(&scenario("tree9_linear.scenario")).replace("sigma_y_m", "sigma_y")).unwrap();
    let out = jttsl(&["run", "--scenario", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sensors.sigma_y"));

    let missing = jttsl(&["run", "--scenario", "/nonexistent.scenario", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));

    let zero = run_small(dir.path(), &["--trials", "0"]);
    assert_eq!(zero.status.code(), Some(2));
}

#[test]
fn numerical_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("singular.scenario");
    // a range-bearing target starting exactly on node 5
    let text = read(&scenario("tree9_rangebearing.scenario"))
        .replace("initial_position_m = [1000.0, 1000.0]", "initial_position_m = [0.0, 0.0]")
        .replace("seed = 0", "seed = 0\nnoise = false");
    std::fs::write(&scen, text).unwrap();
    let out = jttsl(&["run", "--scenario", scen.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap(), "--trials", "1"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
