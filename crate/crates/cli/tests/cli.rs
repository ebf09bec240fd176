//! End-to-end tests of the command-line front-end: they spawn the real
//! binary against the benchmark config with size overrides that keep runs
//! quick.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_spotfutures")
}

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark.json")
}

fn out_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("spotfutures_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .arg("--config")
        .arg(config_path())
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn validate_passes_and_is_byte_identical_across_runs() {
    let dir_a = out_dir("validate_a");
    let dir_b = out_dir("validate_b");
    let small = "pricing.mc_paths=5000";
    let a = run(&["--out", dir_a.to_str().unwrap(), "--set", small, "validate"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = run(&["--out", dir_b.to_str().unwrap(), "--set", small, "validate"]);
    assert!(b.status.success());

    let report_a = std::fs::read(dir_a.join("validate.json")).unwrap();
    let report_b = std::fs::read(dir_b.join("validate.json")).unwrap();
    assert_eq!(
        report_a, report_b,
        "same seed must give byte-identical reports"
    );

    let stdout = String::from_utf8(a.stdout).unwrap();
    assert_eq!(stdout.matches(": PASS").count(), 4, "{stdout}");

    // A different seed still passes but produces a different report body.
    let dir_c = out_dir("validate_c");
    let c = run(&[
        "--out",
        dir_c.to_str().unwrap(),
        "--set",
        small,
        "--seed",
        "7",
        "validate",
    ]);
    assert!(c.status.success());
    let report_c = std::fs::read(dir_c.join("validate.json")).unwrap();
    assert_ne!(report_a, report_c);
}

#[test]
fn price_curve_at_maturity_matches_spot_map() {
    let dir = out_dir("curve");
    let out = dir.to_str().unwrap();
    let a = run(&["--out", out, "price-curve", "--times", "0,0.5,1.0"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = run(&["--out", out, "spot-map"]);
    assert!(b.status.success());

    let curve = std::fs::read_to_string(dir.join("price_curve.csv")).unwrap();
    let spot = std::fs::read_to_string(dir.join("spot_map.csv")).unwrap();

    let spot_prices: Vec<(&str, &str)> = spot
        .lines()
        .skip(1)
        .map(|l| {
            let mut it = l.split(',');
            (it.next().unwrap(), it.next().unwrap())
        })
        .collect();

    let maturity_rows: Vec<&str> = curve
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("1,"))
        .collect();
    assert_eq!(maturity_rows.len(), spot_prices.len());
    for (row, (d, price)) in maturity_rows.iter().zip(&spot_prices) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(&cols[1], d);
        assert_eq!(&cols[2], price, "maturity row disagrees with the spot map");
        assert_eq!(cols[3], "", "no vol at maturity");
        assert_eq!(cols[4], "", "no drift at maturity");
    }
}

#[test]
fn zero_policy_simulation_returns_initial_utility() {
    let dir = out_dir("simzero");
    let a = run(&[
        "--out",
        dir.to_str().unwrap(),
        "--set",
        "producer.initial_stock=0.0",
        "--set",
        "simulation.paths=64",
        "--set",
        "simulation.steps=16",
        "simulate",
        "--policy",
        "zero",
    ]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("simulate_summary.json")).unwrap())
            .unwrap();
    // Initial wealth 1 and utility exponent 0.5: terminal utility is exactly 1.
    assert_eq!(summary["bundle_mean_utility"], serde_json::json!(1.0));
    assert_eq!(summary["flagged_paths"], serde_json::json!(0));
}

#[test]
fn optimal_policy_needs_a_grid_and_runs_with_one() {
    let dir = out_dir("simopt");
    let out = dir.to_str().unwrap();
    let shrink = [
        "--set",
        "grid.nr=9",
        "--set",
        "grid.nx=7",
        "--set",
        "grid.nd=11",
        "--set",
        "simulation.paths=16",
        "--set",
        "simulation.steps=16",
    ];

    let missing = Command::new(bin())
        .arg("--config")
        .arg(config_path())
        .args(["--out", out])
        .args(shrink)
        .args(["simulate", "--policy", "optimal"])
        .output()
        .unwrap();
    assert!(!missing.status.success());
    let stderr = String::from_utf8_lossy(&missing.stderr);
    assert!(stderr.contains("--grid"), "unhelpful error: {stderr}");

    let solve = Command::new(bin())
        .arg("--config")
        .arg(config_path())
        .args(["--out", out])
        .args(shrink)
        .args(["hjb-solve", "--policy-slice", "0.5"])
        .output()
        .unwrap();
    assert!(
        solve.status.success(),
        "{}",
        String::from_utf8_lossy(&solve.stderr)
    );
    let slice = std::fs::read_to_string(dir.join("policy_slice.csv")).unwrap();
    assert!(slice.starts_with("r,x,d,q,u,theta\n"));
    assert_eq!(slice.lines().count(), 1 + 9 * 7 * 11);

    let grid_base = dir.join("value_grid");
    let sim = Command::new(bin())
        .arg("--config")
        .arg(config_path())
        .args(["--out", out])
        .args(shrink)
        .args([
            "simulate",
            "--policy",
            "optimal",
            "--grid",
            grid_base.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        sim.status.success(),
        "{}",
        String::from_utf8_lossy(&sim.stderr)
    );
    assert!(dir.join("bundle.csv").exists());
}

#[test]
fn invalid_configuration_fails_with_field_message() {
    let dir = out_dir("invalid");
    let out = Command::new(bin())
        .arg("--config")
        .arg(config_path())
        .args(["--out", dir.to_str().unwrap()])
        .args(["--set", "spot.cost_exponent=1.7", "spot-map"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("cost_exponent"), "{stderr}");

    let unknown = Command::new(bin())
        .arg("--config")
        .arg(config_path())
        .args(["--out", dir.to_str().unwrap()])
        .args(["--set", "spot.not_a_field=1", "spot-map"])
        .output()
        .unwrap();
    assert!(!unknown.status.success());
    let stderr = String::from_utf8_lossy(&unknown.stderr);
    assert!(stderr.contains("not_a_field"), "{stderr}");
}

#[test]
fn effective_config_round_trips_through_the_engine() {
    let dir = out_dir("echo");
    let a = run(&[
        "--out",
        dir.to_str().unwrap(),
        "--set",
        "demand.sigma=0.25",
        "--seed",
        "31",
        "spot-map",
    ]);
    assert!(a.status.success());
    let echoed = std::fs::read_to_string(dir.join("effective_config.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&echoed).unwrap();
    assert_eq!(parsed["demand"]["sigma"], serde_json::json!(0.25));
    assert_eq!(parsed["seed"], serde_json::json!(31));

    // Feeding the echoed config back must reproduce identical outputs.
    let dir2 = out_dir("echo2");
    let b = Command::new(bin())
        .arg("--config")
        .arg(dir.join("effective_config.json"))
        .args(["--out", dir2.to_str().unwrap(), "spot-map"])
        .output()
        .unwrap();
    assert!(b.status.success());
    let map_a = std::fs::read(dir.join("spot_map.csv")).unwrap();
    let map_b = std::fs::read(dir2.join("spot_map.csv")).unwrap();
    assert_eq!(map_a, map_b);
}
