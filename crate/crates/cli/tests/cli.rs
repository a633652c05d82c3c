use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hdp_core::export::read_trajectory;
use hdp_core::scenario::Scenario;
use hdp_core::sim::evaluate_cost;
use serde_json::Value;
use tempfile::TempDir;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn hdp(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdp"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("HDP_OUT")
        .output()
        .unwrap()
}

fn summary(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

/// The JSON diagnostic on the last stderr line.
fn diagnostic(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn zero_cost_solve_exports_zero_values() {
    let out = TempDir::new().unwrap();
    let o = hdp(&["solve", scenario("zero_cost.json").to_str().unwrap()], out.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv_lines(&out.path().join("value.csv"));
    let header = rdr.remove(0);
    assert_eq!(header, "s,side,x1,V");
    assert!(rdr.len() > 41);
    for line in rdr {
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(v, 0.0, "{line}");
    }
    let s = summary(out.path());
    assert_eq!(s["command"], "solve");
    assert_eq!(s["metrics"]["value_max"], 0.0);
    assert_eq!(s["inputs"]["sha256"].as_str().unwrap().len(), 64);
}

fn csv_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn malformed_json_exits_with_validation_code() {
    let dir = TempDir::new().unwrap();
    let bad = write(dir.path(), "bad.json", "{\"horizon\": 1.0,\n \"system\": [");
    let o = hdp(&["simulate", bad.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let d = diagnostic(&o);
    assert_eq!(d["error"]["kind"], "parse");
    assert_eq!(d["error"]["exit_code"], 2);
    assert!(d["error"]["message"].as_str().unwrap().contains("line 2"), "{d}");
}

#[test]
fn validation_errors_name_their_location() {
    let dir = TempDir::new().unwrap();
    let bad = write(
        dir.path(),
        "bad.json",
        r#"{"horizon": 1.0,
            "system": {"n": 1, "f": ["x2"], "impulse": {"times": [0.5], "I": ["w1"]},
                       "controls": {"u": {"finite": [[0.0]]}, "w": {"finite": [[0.0]]}}},
            "costs": {"F": "0", "Phi": "0", "F0": "0"}}"#,
    );
    let o = hdp(&["simulate", bad.to_str().unwrap(), "--x0", "0", "--dt", "0.1"], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let msg = diagnostic(&o)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("system.f[0]") && msg.contains("x2"), "{msg}");
}

#[test]
fn blow_up_is_a_numerical_failure() {
    let dir = TempDir::new().unwrap();
    let sc = write(
        dir.path(),
        "escape.json",
        r#"{"horizon": 2.0,
            "system": {"n": 1, "f": ["x1^2"], "impulse": {"times": [], "I": ["0"]},
                       "controls": {"u": {"finite": [[0.0]]}, "w": {"finite": [[0.0]]}}},
            "costs": {"F": "0", "Phi": "0", "F0": "0"},
            "simulation": {"x0": [1.0], "dt": 0.01}}"#,
    );
    let o = hdp(&["simulate", sc.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(diagnostic(&o)["error"]["kind"], "numerical");
}

#[test]
fn compare_lq_on_scalar_instance_passes() {
    let out = TempDir::new().unwrap();
    let o = hdp(
        &["compare-lq", scenario("scalar_lq.json").to_str().unwrap(), "--export-stride", "250"],
        out.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(out.path());
    let rel = s["metrics"]["max_relative_error"].as_f64().unwrap();
    assert!(rel <= 0.02, "{rel}");
    assert_eq!(s["metrics"]["passed"], true);
    assert_eq!(s["tolerances"]["max_relative_error"], 0.02);
    assert_eq!(s["config"]["grid"]["nodes"][0], 401);
}

#[test]
fn compare_lq_threshold_failure_exits_4() {
    let out = TempDir::new().unwrap();
    let o = hdp(
        &[
            "compare-lq",
            scenario("scalar_lq.json").to_str().unwrap(),
            "--nodes",
            "41",
            "--grid-dt",
            "0.01",
            "--u-samples",
            "9",
            "--tol",
            "1e-6",
        ],
        out.path(),
    );
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(diagnostic(&o)["error"]["kind"], "threshold");
    assert_eq!(summary(out.path())["metrics"]["passed"], false);
}

#[test]
fn lq_commands_reject_general_scenarios() {
    let out = TempDir::new().unwrap();
    let o = hdp(&["riccati", scenario("zero_cost.json").to_str().unwrap()], out.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(diagnostic(&o)["error"]["kind"], "config");
}

#[test]
fn solve_needs_a_grid() {
    let out = TempDir::new().unwrap();
    let o = hdp(&["solve", scenario("event_surface.json").to_str().unwrap()], out.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(diagnostic(&o)["error"]["message"].as_str().unwrap().contains("no grid"));
}

#[test]
fn outputs_are_byte_identical_across_runs_and_threads() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let sc = scenario("double_integrator.json");
    let run = |out: &Path, threads: &str| {
        let o = hdp(&["synthesize", sc.to_str().unwrap(), "--threads", threads], out);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run(a.path(), "1");
    run(b.path(), "3");
    for name in ["value.csv", "policy.csv", "trajectory.csv", "summary.json"] {
        let (x, y) = (std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        assert!(x == y, "{name} differs");
        assert!(!x.contains(&b'\r'));
    }
}

#[test]
fn exported_trajectory_reproduces_the_cost() {
    let out = TempDir::new().unwrap();
    let path = scenario("double_integrator.json");
    let o = hdp(&["simulate", path.to_str().unwrap()], out.path());
    assert_eq!(o.status.code(), Some(0));
    let tr = read_trajectory(std::fs::File::open(out.path().join("trajectory.csv")).unwrap()).unwrap();
    let sc = Scenario::load(&path).unwrap();
    let cost = evaluate_cost(&tr, &sc.costs).unwrap().total;
    let reported = summary(out.path())["metrics"]["cost"]["total"].as_f64().unwrap();
    assert!((cost - reported).abs() <= 1e-12, "{cost} vs {reported}");
}

#[test]
fn verify_pmp_with_riccati_controls_has_no_violations() {
    let out = TempDir::new().unwrap();
    let o = hdp(
        &[
            "verify-pmp",
            scenario("scalar_lq.json").to_str().unwrap(),
            "--controls",
            "riccati",
            "--nodes",
            "101",
            "--grid-dt",
            "0.01",
        ],
        out.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = &summary(out.path())["metrics"];
    assert_eq!(m["violations"], 0);
    assert!(m["costate_vs_riccati_max_rel"].as_f64().unwrap() <= 0.005);
    assert!(out.path().join("costate.csv").exists() && out.path().join("extremum.csv").exists());
}

#[test]
fn output_directory_defaults_to_the_environment() {
    let dir = TempDir::new().unwrap();
    let target = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_hdp"))
        .args(["simulate", scenario("sampled_data.json").to_str().unwrap()])
        .env("HDP_OUT", &target)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(target.join("trajectory.csv").exists());
    assert_eq!(summary(&target)["metrics"]["jumps"], 3);
}

#[test]
fn check_expr_prints_derivatives_and_positions_errors() {
    let out = TempDir::new().unwrap();
    let o = hdp(&["check-expr", "x1^2 * sin(x2)", "--vars", "x1,x2", "--at", "2,0"], out.path());
    assert_eq!(o.status.code(), Some(0));
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["value"], 0.0);
    assert_eq!(doc["gradient"][0], 0.0);
    assert_eq!(doc["gradient"][1], 4.0);
    let o = hdp(&["check-expr", "x1 + (x2", "--vars", "x1,x2"], out.path());
    assert_eq!(o.status.code(), Some(2));
    let d = diagnostic(&o);
    assert_eq!(d["error"]["kind"], "expression");
    assert!(d["error"]["message"].as_str().unwrap().contains("offset 8"), "{d}");
}

#[test]
fn unknown_flags_are_usage_errors() {
    let out = TempDir::new().unwrap();
    let o = hdp(&["solve", "--no-such-flag"], out.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(diagnostic(&o)["error"]["kind"], "usage");
}
