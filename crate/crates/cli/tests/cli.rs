use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reachsep_cli::scenario::Scenario;
use serde_json::Value;
use tempfile::TempDir;

const COARSE: [&str; 6] = ["--grid-step", "0.5", "--directions", "8", "--quad-steps", "50"];

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn reachsep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reachsep")).args(args).output().expect("binary runs")
}

fn run_coarse(scenario: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(&COARSE);
    args.extend_from_slice(extra);
    reachsep(&args)
}

fn variant(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(scenario_path("quadrotor_pair.json")).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.join("variant.json");
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn safe_run_exits_zero_and_writes_artifacts() {
    let dir = TempDir::new().unwrap();
    let out = run_coarse(&scenario_path("quadrotor_pair.json"), dir.path(), &["--plots"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "tubes_initial.csv",
        "tubes.csv",
        "separation_initial.csv",
        "separation.csv",
        "solution.json",
        "encounter.json",
        "diagnostics.json",
        "initial_tubes.svg",
        "final_tubes.svg",
        "control_sets.svg",
        "separation.svg",
    ] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let diag = json(&dir.path().join("diagnostics.json"));
    assert_eq!(diag["verdict"], "safe");
    assert_eq!(diag["exit_code"], 0);
    assert!(diag["final_separation"]["min_margin_m"].as_f64().unwrap() >= -1e-6);
    let enc = json(&dir.path().join("encounter.json"));
    assert!((enc["tau_s"].as_f64().unwrap() - 4.0).abs() <= 0.5);
}

#[test]
fn unreachable_separation_exits_one() {
    let dir = TempDir::new().unwrap();
    let path = variant(dir.path(), |v| v["required_separation_m"] = 1000.0.into());
    let out = run_coarse(&path, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(1));
    let diag = json(&dir.path().join("out/diagnostics.json"));
    assert_eq!(diag["verdict"], "infeasible");
    assert!(diag["reason"].as_str().unwrap().contains("distance"));
}

#[test]
fn weak_authority_exits_two() {
    let dir = TempDir::new().unwrap();
    let path = variant(dir.path(), |v| {
        for ac in ["aircraft_a", "aircraft_b"] {
            v[ac]["control_semi_axes"] = serde_json::json!([0.1, 0.0002, 0.0002]);
        }
        v["scalarization"]["max_iterations"] = 1.into();
    });
    let out = run_coarse(&path, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    let diag = json(&dir.path().join("out/diagnostics.json"));
    assert_eq!(diag["verdict"], "unsafe");
    assert!(diag["final_separation"]["min_margin_m"].as_f64().unwrap() < 0.0);
}

#[test]
fn malformed_input_exits_three() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let out = run_coarse(&bad, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(3));

    let unknown = variant(dir.path(), |v| v["wind_mps"] = 3.0.into());
    let out = run_coarse(&unknown, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("wind_mps"));

    let out = run_coarse(&dir.path().join("absent.json"), &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let res = run_coarse(&scenario_path("fixedwing_pair.json"), out, &["--plots", "--verify-mc", "200", "--seed", "7"]);
        assert_eq!(res.status.code(), Some(0));
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 11);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?} differs");
    }
}

#[test]
fn shipped_scenarios_round_trip() {
    for name in ["quadrotor_pair.json", "fixedwing_pair.json"] {
        let s = Scenario::load(&scenario_path(name)).unwrap();
        let again = Scenario::parse(&s.to_json()).unwrap();
        assert_eq!(s, again);
    }
}

#[test]
fn plots_command_redraws_and_warns_without_directions() {
    let dir = TempDir::new().unwrap();
    let out = run_coarse(&scenario_path("fixedwing_pair.json"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    let res = reachsep(&["plots", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let listed = String::from_utf8_lossy(&res.stdout);
    assert!(listed.contains("control_sets.svg") && listed.contains("final_tubes.svg"));

    let empty = TempDir::new().unwrap();
    let scenario = scenario_path("fixedwing_pair.json");
    let out = reachsep(&[
        "run",
        scenario.to_str().unwrap(),
        "--out",
        empty.path().to_str().unwrap(),
        "--grid-step",
        "0.5",
        "--quad-steps",
        "50",
        "--directions",
        "0",
        "--plots",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert!(!empty.path().join("final_tubes.svg").exists());
    assert!(empty.path().join("separation.svg").is_file());

    let missing = TempDir::new().unwrap();
    let res = reachsep(&["plots", missing.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3));
}
