use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn distacc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distacc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const LINE3: &str = r#"{"root": 0, "nodes": [
  {"id": 1, "weight": 1.0, "parent": 0},
  {"id": 2, "weight": 1.0, "parent": 1},
  {"id": 3, "weight": 1.0, "parent": 2}
]}"#;

const PATH3: &str = r#"{"root": 0, "nodes": [
  {"id": 0, "weight": 1.0},
  {"id": 1, "weight": 1.0, "parent": 0},
  {"id": 2, "weight": 1.0, "parent": 1}
]}"#;

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn setup() -> (TempDir, String, String) {
    let dir = TempDir::new().unwrap();
    let line = write(dir.path(), "line3.json", LINE3).display().to_string();
    let path = write(dir.path(), "path3.json", PATH3).display().to_string();
    (dir, line, path)
}

#[test]
fn bounds_happy_path() {
    let (_dir, line, _) = setup();
    let v = json(&distacc(&["bounds", "--tree", &line, "--D", "0.03"]));
    assert_eq!(v["mode"], "aggregation");
    assert_eq!(v["total_distortion"], 0.03);
    assert_eq!(v["per_link"].as_array().unwrap().len(), 3);
    let inner = v["inner_bits"].as_f64().unwrap();
    let expected = 0.5 * (6.0f64 / 1e-6).log2();
    assert!((inner - expected).abs() < 1e-10);
}

#[test]
fn infeasible_target_exit_code() {
    let (_dir, line, _) = setup();
    let out = distacc(&["allocate", "--tree", &line, "--D", "-1"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("infeasible distortion"), "{err}");
    assert_eq!(err.trim().lines().count(), 1);
}

#[test]
fn input_errors_exit_two() {
    let (dir, line, _) = setup();
    assert_eq!(distacc(&["bounds", "--D", "0.1"]).status.code(), Some(2));
    assert_eq!(distacc(&["frobnicate"]).status.code(), Some(2));
    let bad = write(dir.path(), "bad.json", r#"{"root": 0, "nodes": [{"id": 1, "weight": 0, "parent": 0}]}"#);
    let out = distacc(&["bounds", "--tree", bad.to_str().unwrap(), "--D", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
    let missing = distacc(&["bounds", "--tree", "/nonexistent/tree.json", "--D", "0.1"]);
    assert_eq!(missing.status.code(), Some(2));
    // consensus needs every node weighted
    let out = distacc(&["consensus-allocate", "--tree", &line, "--D", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gap_sweep_csv() {
    let out = distacc(&["gap-sweep", "--line-n", "2..8", "--D", "1e-2,1e-4,1e-6"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,D,delta_r,asymptote,delta_minus_asymptote"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 21);
    let keys: Vec<(u64, f64)> = rows.iter().map(|r| (r[0] as u64, r[1])).collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(keys, sorted);
    let n4 = rows.iter().find(|r| r[0] == 4.0 && r[1] == 1e-6).unwrap();
    assert!((n4[2] - 2.2925).abs() <= 0.05);
}

#[test]
fn simulate_is_byte_reproducible() {
    let (dir, line, _) = setup();
    let args = ["simulate", "--tree", &line, "--D", "0.03", "--N", "200", "--trials", "10", "--seed", "17"];
    let a = distacc(&args);
    let b = distacc(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);

    let out = dir.path().join("sim.csv");
    let mut with_out = args.to_vec();
    with_out.extend(["--format", "csv", "--out", out.to_str().unwrap()]);
    assert!(distacc(&with_out).status.success());
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.starts_with("link_from,link_to,empirical_inc,ci,reference_inc\n"));
    assert!(text.lines().last().unwrap().starts_with("total,"));
}

#[test]
fn json_floats_have_twelve_digits() {
    let (_dir, line, _) = setup();
    let out = distacc(&["bounds", "--tree", &line, "--D", "0.03"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for token in text.split(|c: char| !(c.is_ascii_digit() || c == '.' || c == 'e' || c == '-')) {
        if let Some((_, frac)) = token.split_once('.') {
            let digits = token.split('e').next().unwrap().chars().filter(|c| c.is_ascii_digit()).count();
            assert!(digits <= 13, "{token} ({frac})");
        }
    }
}

#[test]
fn consensus_commands() {
    let (_dir, _, path) = setup();
    let v = json(&distacc(&["consensus-allocate", "--tree", &path, "--D", "0.04"]));
    assert_eq!(v["method"], "consensus-kkt");
    let sum = v["sum_rate_bits"].as_f64().unwrap();
    assert!((sum - v["numeric_sum_rate_bits"].as_f64().unwrap()).abs() < 1e-6);
    assert_eq!(v["uniform_split"]["inc"], 0.01);

    let v = json(&distacc(&["consensus-bounds", "--tree", &path, "--D", "0.04"]));
    assert_eq!(v["mode"], "consensus");
    assert!(v["classical_consensus_comparator_bits"].is_number());

    let v = json(&distacc(&[
        "consensus-simulate", "--tree", &path, "--D", "0.04", "--N", "500", "--trials", "20",
    ]));
    assert_eq!(v["per_node"].as_array().unwrap().len(), 3);
    assert_eq!(v["config"]["mode"], "consensus");
}

#[test]
fn per_link_files_and_config() {
    let (dir, line, path) = setup();
    let agg = write(dir.path(), "agg.json", r#"{"1": 0.01, "2": 0.01, "3->2": 0.01}"#);
    let v = json(&distacc(&["bounds", "--tree", &line, "--d-per-link", agg.to_str().unwrap()]));
    assert_eq!(v["total_distortion"], 0.03);

    let edges = write(
        dir.path(),
        "edges.json",
        r#"{"0->1": 0.01, "1->0": 0.01, "1->2": 0.01, "2->1": 0.01}"#,
    );
    let v = json(&distacc(&[
        "simulate", "--tree", &path, "--mode", "consensus", "--d-per-link", edges.to_str().unwrap(),
        "--N", "100", "--trials", "5",
    ]));
    assert_eq!(v["reference_total"], 0.06);

    let cfg = write(
        dir.path(),
        "cfg.json",
        &format!(r#"{{"tree": {line:?}, "D": 0.03, "N": 50, "trials": 4, "seed": 9, "scheme": "dither"}}"#),
    );
    let v = json(&distacc(&["simulate", "--config", cfg.to_str().unwrap()]));
    assert_eq!(v["config"]["scheme"], "dithered-quantizer");
    assert_eq!(v["config"]["seed"], 9);
    let v = json(&distacc(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "10"]));
    assert_eq!(v["config"]["seed"], 10);
}

#[test]
fn validate_runs_oracle() {
    let (_dir, line, path) = setup();
    let v = json(&distacc(&["validate", "--tree", &line]));
    assert_eq!(v["status"], "ok");
    assert_eq!(v["checks"].as_array().unwrap().len(), 1);
    let v = json(&distacc(&["validate", "--tree", &path, "--D", "0.01"]));
    assert_eq!(v["checks"].as_array().unwrap().len(), 2);
    let out = distacc(&["validate", "--tree", &line, "--D", "100"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn allocate_methods() {
    let (_dir, line, _) = setup();
    let eq = json(&distacc(&["allocate", "--tree", &line, "--D", "0.03"]));
    assert_eq!(eq["method"], "equal-split");
    let num = json(&distacc(&["allocate", "--tree", &line, "--D", "0.03", "--method", "numeric"]));
    assert_eq!(num["method"], "numeric-penalized");
    assert!(num["objective_bits"].is_number());
    let csv = distacc(&["allocate", "--tree", &line, "--D", "0.03", "--format", "csv"]);
    let text = String::from_utf8(csv.stdout).unwrap();
    assert!(text.starts_with("link,from,to,inc,rate_bits\n"));
    assert_eq!(text.lines().count(), 5);
}
