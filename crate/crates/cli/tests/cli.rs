use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn occlp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occlp"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Runs a subcommand into `out` under a fixed run id and returns the exit
/// code and the run directory.
fn run(sub: &str, config: &Path, out: &Path, id: &str, extra: &[&str]) -> (i32, PathBuf, String) {
    let mut args = vec![
        sub,
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--run-id",
        id,
    ];
    args.extend_from_slice(extra);
    let o = occlp(&args);
    let stdout =
        String::from_utf8_lossy(&o.stdout).into_owned() + &String::from_utf8_lossy(&o.stderr);
    (
        o.status.code().unwrap_or(-1),
        out.join(sub).join(id),
        stdout,
    )
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const CONSTANT_COST: &str = r#"{
  "system": {
    "kind": "expr",
    "state_names": ["x", "y"],
    "control_name": "u",
    "f": ["u*y", "-u*x"],
    "k": "0.7",
    "control_min": -1,
    "control_max": 1,
    "constraint": { "type": "box", "lo": [-1, -1], "hi": [1, 1] },
    "mf": 1.5,
    "mk": 1
  },
  "grid": { "nodes": 11, "controls": 3, "step": 0.05 },
  "horizons": { "T": [1, 3], "lambda": [1, 0.5], "delta": [0, 0.05] },
  "y0": [[0.2, -0.3]]
}"#;

#[test]
fn lp_on_the_polar_rotation_reports_the_limit_value() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "lp.json",
        r#"{"system": {"kind": "builtin", "name": "rotation-polar"}, "y0": [[0.5, 1.0]]}"#,
    );
    let (code, dir, text) = run("lp", &cfg, tmp.path(), "a", &["--strict"]);
    assert_eq!(code, 0, "{text}");
    let out = json(&dir.join("lp.json"));
    let kstar = out["runs"][0]["kstar"].as_f64().unwrap();
    assert!((kstar - 0.25).abs() <= 5e-2, "{kstar}");
    assert!(out["runs"][0]["gap"].as_f64().unwrap() <= 1e-6);
    assert_eq!(out["runs"][0]["status"], "PASS");
    // the resolved config, defaults included
    assert_eq!(out["config"]["grid"]["nodes"], 41);
    assert_eq!(out["config"]["lp"]["degree"], 4);
    assert!(dir.join("certificate_0.json").exists() && dir.join("gamma_0.csv").exists());
}

#[test]
fn constant_cost_gives_constant_tables() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", CONSTANT_COST);
    let (code, dir, text) = run("value", &cfg, tmp.path(), "a", &[]);
    assert_eq!(code, 0, "{text}");
    let summary = json(&dir.join("summary.json"));
    let tables = summary["tables"].as_array().unwrap();
    assert_eq!(tables.len(), 8);
    for t in tables {
        let mut rdr = csv::Reader::from_path(dir.join(t["file"].as_str().unwrap())).unwrap();
        let mut active = 0;
        for rec in rdr.records() {
            let v: f64 = rec.unwrap()[2].parse().unwrap();
            if !v.is_nan() {
                assert!((v - 0.7).abs() <= 1e-12, "{}: {v}", t["file"]);
                active += 1;
            }
        }
        assert_eq!(active, t["active_nodes"].as_u64().unwrap());
        // δ > 0 tightens Y and drops boundary nodes
        let all = if t["delta"] == 0.0 { 121 } else { 81 };
        assert!(active >= all, "{}: {active}", t["file"]);
    }
}

#[test]
fn closed_form_certificate_file_passes() {
    let tmp = TempDir::new().unwrap();
    let (code, dir, text) = run(
        "certify",
        &configs().join("certify_polar.json"),
        tmp.path(),
        "a",
        &["--strict"],
    );
    assert_eq!(code, 0, "{text}");
    assert!(text.starts_with("PASS"), "{text}");
    let out = json(&dir.join("certify.json"));
    assert_eq!(out["results"][0]["status"], "PASS");
    assert_eq!(out["source"], "polar_certificate.json");
}

#[test]
fn failing_certificate_sets_the_strict_exit_code() {
    let tmp = TempDir::new().unwrap();
    let mut cert = json(&configs().join("polar_certificate.json"));
    cert["mu"] = Value::from(0.3);
    fs::write(tmp.path().join("bad.json"), cert.to_string()).unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"system": {"kind": "builtin", "name": "rotation-polar"}, "y0": [[0.5, 1.0]],
            "grid": {"nodes": 21, "controls": 11, "step": 0.01}, "certificate": {"file": "bad.json"}}"#,
    );
    let (code, _, text) = run("certify", &cfg, tmp.path(), "lax", &[]);
    assert_eq!(code, 0);
    assert!(text.starts_with("FAIL"), "{text}");
    let (code, _, _) = run("certify", &cfg, tmp.path(), "strict", &["--strict"]);
    assert_eq!(code, 4);
}

#[test]
fn config_errors_exit_with_2_and_name_the_key() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        (
            r#"{"system": {"kind": "builtin", "name": "rotation-polar"}, "y0": [[0.5, 1.0]], "sede": 3}"#,
            "sede",
        ),
        (
            r#"{"system": {"kind": "builtin", "name": "rotation-polar"}, "y0": [[0.5, 1.0]],
                "grid": {"nodes": 41, "controls": 11, "step": "fast"}}"#,
            "grid.step",
        ),
        (
            r#"{"system": {"kind": "builtin", "name": "spinning-top"}, "y0": [[0.5, 1.0]]}"#,
            "system.name",
        ),
        (
            r#"{"system": {"kind": "builtin", "name": "rotation-polar"}, "y0": [[0.5, 1.0, 2.0]]}"#,
            "y0[0]",
        ),
        (
            r#"{"system": {"kind": "builtin", "name": "rotation-polar"}, "y0": [[0.5, 1.0]]"#,
            "line",
        ),
    ];
    for (i, (text, key)) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("bad{i}.json"), text);
        let (code, dir, msg) = run("lp", &cfg, tmp.path(), &format!("r{i}"), &[]);
        assert_eq!(code, 2, "case {i}: {msg}");
        assert!(msg.contains(key), "case {i}: {msg}");
        assert!(!dir.exists());
    }
    let (code, _, msg) = run("lp", &tmp.path().join("missing.json"), tmp.path(), "m", &[]);
    assert_eq!(code, 2, "{msg}");
}

#[test]
fn numerical_failures_exit_with_3() {
    let tmp = TempDir::new().unwrap();
    // turning at unit speed from θ = 3 leaves Y within a quarter time unit
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"system": {"kind": "builtin", "name": "rotation-polar"}, "y0": [[0.5, 3.0]],
            "simulate": {"horizon": 2, "control": {"breakpoints": [0], "values": [1]}}}"#,
    );
    let (code, dir, msg) = run("simulate", &cfg, tmp.path(), "a", &[]);
    assert_eq!(code, 3, "{msg}");
    assert!(msg.contains("constraint"), "{msg}");
    assert!(!dir.exists());
}

#[test]
fn run_directories_follow_the_layout() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", CONSTANT_COST);
    let (code, dir, _) = run("simulate", &cfg, tmp.path(), "first", &[]);
    assert_eq!(code, 0);
    assert_eq!(dir, tmp.path().join("simulate").join("first"));
    let (code, _, msg) = run("simulate", &cfg, tmp.path(), "first", &[]);
    assert_eq!(code, 2, "{msg}");
    // without a run id the directory is a timestamp
    let o = occlp(&[
        "simulate",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let names: Vec<String> = fs::read_dir(tmp.path().join("simulate"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.len(), 2);
    assert!(names.iter().any(|n| n.parse::<u128>().is_ok()), "{names:?}");
}

#[test]
fn simulate_writes_a_normalized_measure() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &CONSTANT_COST.replace(
            r#""y0""#,
            r#""simulate": {"control": {"breakpoints": [0, 1], "values": [1, -1]}}, "y0""#,
        ),
    );
    let (code, dir, msg) = run("simulate", &cfg, tmp.path(), "a", &[]);
    assert_eq!(code, 0, "{msg}");
    let mut rdr = csv::Reader::from_path(dir.join("measure_0.csv")).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["x", "y", "u", "w"]
    );
    let mass: f64 = rdr
        .records()
        .map(|r| r.unwrap()[3].parse::<f64>().unwrap())
        .sum();
    assert!((mass - 1.0).abs() <= 1e-12);
    let traj = fs::read_to_string(dir.join("trajectory_0.csv")).unwrap();
    assert!(traj.starts_with("t,x,y,u\n"));
    assert_eq!(traj.lines().count(), 1 + 61);
    let summary = json(&dir.join("summary.json"));
    assert!((summary["runs"][0]["average_cost"].as_f64().unwrap() - 0.7).abs() <= 1e-12);
}

#[test]
fn outputs_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &CONSTANT_COST
            .replace("\"k\": \"0.7\"", "\"k\": \"x^2 + u^2\"")
            .replace("\"mk\": 1", "\"mk\": 3"),
    );
    for sub in ["value", "simulate", "report"] {
        let (c1, a, m1) = run(sub, &cfg, tmp.path(), "one", &[]);
        let (c2, b, m2) = run(sub, &cfg, tmp.path(), "two", &[]);
        assert_eq!((c1, c2), (0, 0), "{m1}{m2}");
        let mut names: Vec<_> = fs::read_dir(&a)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(!names.is_empty());
        for name in names {
            let (x, y) = (
                fs::read(a.join(&name)).unwrap(),
                fs::read(b.join(&name)).unwrap(),
            );
            assert_eq!(x, y, "{sub}/{name:?} differs");
        }
    }
}

#[test]
fn feedback_and_report_on_the_polar_rotation() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("rotation_polar.json");
    let (code, dir, msg) = run("feedback", &cfg, tmp.path(), "a", &["--strict"]);
    assert_eq!(code, 0, "{msg}");
    let fb = json(&dir.join("feedback.json"));
    let avg = fb["runs"][1]["average_cost"].as_f64().unwrap();
    assert!((avg - 0.25).abs() <= 3e-2, "{avg}");
    let (code, dir, msg) = run("report", &cfg, tmp.path(), "a", &["--strict"]);
    assert_eq!(code, 0, "{msg}");
    let rep = json(&dir.join("report.json"));
    assert_eq!(rep["y0"].as_array().unwrap().len(), 3);
    for name in ["value_vs_T.svg", "abel_vs_lambda.svg", "sandwich.svg"] {
        let svg = fs::read_to_string(dir.join(name)).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("<path"), "{name}");
    }
}
