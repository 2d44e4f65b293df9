//! End-to-end runs of the `taskfetch` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn taskfetch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taskfetch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn table_value(dir: &Path, b1: u32, b2: u32) -> f64 {
    let mut rdr = csv::Reader::from_path(dir.join("table.csv")).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        if rec[0].parse::<u32>().unwrap() == b1 && rec[1].parse::<u32>().unwrap() == b2 {
            return rec[4].parse().unwrap();
        }
    }
    panic!("state ({b1}, {b2}) missing from table");
}

#[test]
fn solve_reduced_reports_a_switchover_curve() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("solve");
    let run = taskfetch(&[
        "solve", "--reduced", "0.6,0.8", "--c", "1.2", "--grid", "20,20", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout(&run).contains("switchover = true"));
    for f in ["table.csv", "switchover.json", "cone.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("switchover.json")).unwrap()).unwrap();
    assert_eq!(report["switchover"], true);
}

#[test]
fn solve_dump_holds_hand_computed_values() {
    let dir = TempDir::new().unwrap();
    let out = dir.path();
    let run = taskfetch(&[
        "solve", "--reduced", "1,1", "--c", "2", "--grid", "4,4", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0);
    // With certain links and service each task clears in one slot.
    assert!((table_value(out, 0, 1) - 2.0).abs() < 1e-9);
    assert!((table_value(out, 1, 0) - 1.0).abs() < 1e-9);
    assert!((table_value(out, 0, 0)).abs() < 1e-12);
}

#[test]
fn invalid_config_exits_with_config_code() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(
        &cfg,
        r#"{
  "channel": {"transition": [[0.9, 0.2], [0.1, 0.9]], "attribute": [0.9, 0.1]},
  "processor": {"transition": [[1.0]], "attribute": [0.5]},
  "initial_b1": 5,
  "c_values": [1.0],
  "episodes": 10
}"#,
    )
    .unwrap();
    let run = taskfetch(&["solve", "--config", cfg.to_str().unwrap(), "--out",
        dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&run), 2);
    assert!(!String::from_utf8_lossy(&run.stderr).is_empty());

    let missing = taskfetch(&["sweep", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(code(&missing), 2);
    let unknown = taskfetch(&["sweep", "--preset", "slow_ds01_dmu167", "--policies", "greedy"]);
    assert_eq!(code(&unknown), 2);
}

#[test]
fn never_fetch_points_do_not_depend_on_c() {
    let dir = TempDir::new().unwrap();
    let out = dir.path();
    let run = taskfetch(&[
        "sweep", "--preset", "fast_ds08_dmu167", "--policies", "never", "--episodes", "200",
        "--c-grid", "1:100:log:4", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0);
    let mut rdr = csv::Reader::from_path(out.join("never.csv")).unwrap();
    let rows: Vec<(f64, f64)> = rdr
        .deserialize::<std::collections::HashMap<String, String>>()
        .map(|r| {
            let r = r.unwrap();
            (r["b2_ave"].parse().unwrap(), r["d_ave"].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.windows(2).all(|w| w[0] == w[1]));
    assert!(out.join("tradeoff.svg").exists());
    assert!(!out.join("dominance.json").exists());
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let run = taskfetch(&[
        "sweep", "--preset", "slow_ds01_dmu167", "--policies", "opt,rfon,always", "--episodes",
        "150", "--seed", "42", "--c-grid", "1,5,40", "--out", first.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0);
    assert!(first.join("dominance.json").exists());
    let manifest = first.join("manifest.json");
    let again = taskfetch(&[
        "sweep", "--config", manifest.to_str().unwrap(), "--out", second.to_str().unwrap(),
    ]);
    assert_eq!(code(&again), 0, "{}", String::from_utf8_lossy(&again.stderr));
    for f in ["opt.csv", "rfon.csv", "always.csv"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn compare_gates_on_tolerance() {
    let dir = TempDir::new().unwrap();
    let out = dir.path();
    let run = taskfetch(&[
        "sweep", "--preset", "slow_ds01_dmu167", "--policies", "opt,fon", "--episodes", "300",
        "--c-grid", "1,3,10", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0);
    let opt = out.join("opt.csv");
    let fon = out.join("fon.csv");

    let same = taskfetch(&["compare", opt.to_str().unwrap(), opt.to_str().unwrap()]);
    assert_eq!(code(&same), 0);
    assert!(stdout(&same).starts_with("pass"));

    // Scale one backlog entry by 10%.
    let text = fs::read_to_string(&opt).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut cells: Vec<String> = lines[2].split(',').map(str::to_string).collect();
    let b2: f64 = cells[1].parse().unwrap();
    cells[1] = format!("{}", b2 * 1.1);
    lines[2] = cells.join(",");
    let perturbed = out.join("perturbed.csv");
    fs::write(&perturbed, lines.join("\n") + "\n").unwrap();
    let bad = taskfetch(&["compare", opt.to_str().unwrap(), perturbed.to_str().unwrap(),
        "--tol", "0.05"]);
    assert_eq!(code(&bad), 4);
    let loose = taskfetch(&["compare", opt.to_str().unwrap(), perturbed.to_str().unwrap(),
        "--tol", "0.2"]);
    assert_eq!(code(&loose), 0);

    let delay = taskfetch(&["compare", opt.to_str().unwrap(), fon.to_str().unwrap(),
        "--columns", "d_ave", "--tol", "0.2"]);
    assert_eq!(code(&delay), 0, "{}", stdout(&delay));
}
