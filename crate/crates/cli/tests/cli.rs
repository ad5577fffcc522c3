use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tclgrid::powerflow::{voltage_sensitivity, DistFlowLine, S_BASE_KVA};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn tclgrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tclgrid")).args(args).env_remove("TCLGRID_OUT_DIR").output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn validate_shipped_fixtures() {
    let config = fixture("scenario.json");
    let out = tclgrid(&["validate", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let feeder = fixture("synth-r1.json");
    let out = tclgrid(&["validate", "--feeder", feeder.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("120 houses"));
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = tclgrid(&["run"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.starts_with("tclgrid:error:usage:"), "{err}");
    assert!(err.contains("Usage:"));
}

#[test]
fn unreadable_inputs_are_input_errors() {
    let out = tclgrid(&["validate", "--config", "/nonexistent/scenario.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("tclgrid:error:input:"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("feeder.json");
    std::fs::write(&bad, r#"{"schema_version": 1, "name": "x", "nominal_voltage_v": "high"}"#).unwrap();
    let out = tclgrid(&["validate", "--feeder", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nominal_voltage_v"), "{}", stderr(&out));
}

#[test]
fn sensitivity_rows_match_the_library() {
    let config = fixture("scenario.json");
    let out = tclgrid(&[
        "sensitivity",
        "--config",
        config.to_str().unwrap(),
        "--line",
        "lat1A-line",
        "--pf",
        "0.97",
        "--every",
        "600",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("time_s,p_pu,q_pu,v_send_pu,q_term,p_term,v_term,total"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 6);
    // The lateral is 1 km of 1.0 + j0.5 ohm/km on the 7.2 kV primary.
    let z_base = 7200.0 * 7200.0 / (S_BASE_KVA * 1000.0);
    for r in rows {
        let line = DistFlowLine { v_send: r[3], r: 1.0 / z_base, x: 0.5 / z_base, p: r[1], q: r[2] };
        let terms = voltage_sensitivity(&line, 0.97).unwrap();
        for (printed, expected) in [(r[4], terms.q_term), (r[5], terms.p_term), (r[7], terms.total())] {
            assert!((printed - expected).abs() <= 1e-7 * expected.abs(), "{printed} vs {expected}");
        }
        assert_eq!(r[6], 0.0);
    }
}

#[test]
fn unknown_line_is_an_input_error() {
    let config = fixture("scenario.json");
    let out = tclgrid(&["sensitivity", "--config", config.to_str().unwrap(), "--line", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn repeated_runs_produce_identical_artifacts() {
    let config = fixture("scenario.json");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (k, dir) in dirs.iter().enumerate() {
        let threads = if k == 0 { "1" } else { "2" };
        let out = tclgrid(&[
            "--threads",
            threads,
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    let read = |d: &Path| std::fs::read_to_string(d.join("manifest.json")).unwrap();
    let (a, b) = (read(dirs[0].path()), read(dirs[1].path()));
    assert_eq!(a, b);
    assert!(a.contains("summary.csv"));
}
