use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fadestab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fadestab")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const EX0: &str = "builtin:ex0?lambda=-1&mu=1";

#[test]
fn dry_run_prints_resolved_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"system": "builtin:ex0?lambda=-1&mu=1", "z0": [0.4, 0], "dt": 0.1, "n_paths": 7}"#)
        .unwrap();
    let o = fadestab(&["--config", cfg.to_str().unwrap(), "--dry-run", "--seed", "9", "simulate", "--dt", "0.02"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["command"], "simulate");
    assert_eq!(doc["seed"], 9);
    // flag beats config, config beats default
    assert_eq!(doc["parameters"]["config"]["dt"], 0.02);
    assert_eq!(doc["parameters"]["n_paths"], 7);
    assert_eq!(doc["parameters"]["config"]["z0"][0], 0.4);
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"sytem": "builtin:ex0"}"#).unwrap();
    assert_eq!(code(&fadestab(&["--config", cfg.to_str().unwrap(), "average"])), 2);
    assert_eq!(code(&fadestab(&["reproduce-figure", "--index", "4", "--dry-run"])), 2);
    assert_eq!(code(&fadestab(&["orbit", "--system", "builtin:ex1?h=1&p=1&q=2&lambda=-1&mu=1", "--emax", "1.9"])), 2);
    assert_eq!(code(&fadestab(&["average", "--system", "builtin:nope"])), 2);
    assert_eq!(code(&fadestab(&["average", "--system", EX0, "--order", "9"])), 2);
    assert_eq!(code(&fadestab(&["simulate", "--system", EX0])), 2, "missing z0");
}

#[test]
fn orbit_writes_frequency_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = fadestab(&["--out", out, "orbit", "--system", "builtin:ex1?h=1&p=1&q=2&lambda=-1&mu=1",
        "--emin", "0.01", "--emax", "0.1", "--n-energies", "4", "--dump-orbits"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("1 - E/8"));
    let csv = std::fs::read_to_string(dir.path().join("frequency.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "E,nu,period,dnu_dE");
    assert_eq!(lines.len(), 5);
    let nu: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((nu - (1.0 - 0.01 / 8.0)).abs() < 1e-4);
    assert!(dir.path().join("orbit_003.csv").exists());
}

#[test]
fn average_and_classify_linear_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = fadestab(&["--out", out, "average", "--system", EX0]);
    assert_eq!(code(&o), 0);
    let fit = json(&dir.path().join("fit.json"));
    assert_eq!(fit["case_tag"], "LINEAR");
    assert_eq!(fit["n"], 2);
    assert!((fit["lambda_n"].as_f64().unwrap() + 0.5).abs() < 1e-6);
    let header = std::fs::read_to_string(dir.path().join("lambda_k.csv")).unwrap();
    assert!(header.starts_with("E,Lambda_1,Lambda_2"));

    let o = fadestab(&["--out", out, "classify", "--system", EX0]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("verdict: polynomially stable"));
    let v = json(&dir.path().join("verdict.json"));
    assert_eq!(v["labels"][0], "polynomially stable");
    assert_eq!(v["verdicts"][0]["theorem"], "Theorem 2");
}

#[test]
fn practical_stability_reports_a_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = fadestab(&["--out", out, "classify", "--system", "builtin:ex0?lambda=-0.3&mu=1",
        "--delta", "0.1", "--epsilon", "0.5"]);
    assert_eq!(code(&o), 0);
    let v = json(&dir.path().join("verdict.json"));
    assert_eq!(v["labels"][0], "practically stable");
    // n = q: T = t0 (exp((δ/(εμ))²) − 1) with μ = 1
    let h = v["verdicts"][0]["horizon"].as_f64().unwrap();
    assert!((h - 0.04f64.exp_m1()).abs() < 1e-9, "{h}");
}

#[test]
fn all_inconclusive_exits_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let o = fadestab(&["--out", dir.path().to_str().unwrap(), "classify", "--system", "builtin:ex0?lambda=0&mu=0"]);
    assert_eq!(code(&o), 4, "{}", stdout(&o));
    assert!(stdout(&o).contains("inconclusive"));
}

#[test]
fn simulation_output_is_independent_of_worker_count() {
    let run = |jobs: &str, seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        let o = fadestab(&["--out", dir.path().to_str().unwrap(), "--jobs", jobs, "--seed", seed, "simulate",
            "--system", EX0, "--z0", "0.4,0", "--t1", "20", "--n-paths", "12", "--n-times", "30"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let a = std::fs::read(dir.path().join("absz_summary.csv")).unwrap();
        let e = std::fs::read(dir.path().join("energy_summary.csv")).unwrap();
        (a, e)
    };
    let one = run("1", "5");
    assert_eq!(one, run("3", "5"));
    assert_ne!(one, run("1", "6"));
    let text = String::from_utf8(one.0).unwrap();
    assert!(text.starts_with("# system=builtin:ex0?lambda=-1&mu=1 seed=5 dt=0.05"));
    assert_eq!(text.lines().nth(1), Some("t,q05,q25,q50,q75,q95"));
}

#[test]
fn exit_probability_extremes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let base = ["--out", out, "exit-prob", "--system", EX0, "--z0", "0.4,0", "--t1", "10", "--n-paths", "30"];
    let o = fadestab(&[&base[..], &["--epsilon", "100"]].concat());
    assert_eq!(code(&o), 0);
    let r = json(&dir.path().join("exit.json"));
    assert_eq!(r["exit"]["probability"], 0.0);
    assert!((r["exit"]["ci"][1].as_f64().unwrap() - 0.1).abs() < 1e-12, "rule of three");
    // below the initial amplitude: every path exceeds
    let o = fadestab(&[&base[..], &["--epsilon", "0.3", "--weight", "2,2,0.25"]].concat());
    assert_eq!(code(&o), 0);
    let r = json(&dir.path().join("exit.json"));
    assert_eq!(r["exit"]["probability"], 1.0);
    assert_eq!(r["exit"]["weight"]["n"], 2);
}

#[test]
fn simulate_reports_fits_and_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = fadestab(&["--out", out, "simulate", "--system", "builtin:ex0?lambda=-1&mu=0", "--z0", "0.4,0",
        "--t1", "200", "--n-paths", "4", "--save-paths", "2", "--record-stride", "100", "--theta", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&dir.path().join("report.json"));
    // deterministic oscillator: |z| ~ t^{λ/2}
    assert!((r["decay"]["exponent"].as_f64().unwrap() + 0.5).abs() < 0.05);
    assert!(r["scaling"]["level"].as_f64().unwrap() > 0.0);
    let path = std::fs::read_to_string(dir.path().join("path_0001.csv")).unwrap();
    assert_eq!(path.lines().nth(1), Some("t,x,y,absz,E,phi"));
    assert!(!dir.path().join("path_0002.csv").exists());
}

#[test]
fn figure_panels_have_paths_medians_and_reference() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = fadestab(&["--out", out, "reproduce-figure", "--index", "7", "--n-paths", "2", "--t1", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("fig7a.csv")).unwrap();
    let header = csv.lines().find(|l| l.starts_with("t,")).unwrap();
    let cols: Vec<&str> = header.split(',').collect();
    assert_eq!(cols.len(), 1 + 3 * 3 + 1);
    assert!(cols.contains(&"r0=1.7_median"));
    assert!(cols.last().unwrap().starts_with("reference["));
    assert!(csv.contains("# assumption:"));

    let o = fadestab(&["--out", out, "reproduce-figure", "--index", "3", "--panel", "z", "--dry-run"]);
    assert_eq!(code(&o), 2);
}
