//! End-to-end checks of the `passalloc` binary.

use std::path::Path;
use std::process::{Command, Output};

fn passalloc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_passalloc"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

#[test]
fn same_seed_produces_byte_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = passalloc(&["run", "inventory", "--seed", "5", "--out", "a"], tmp.path());
    assert!(out_a.status.success(), "{out_a:?}");
    let out_b = passalloc(&["run", "inventory", "--seed", "5", "--out", "b"], tmp.path());
    assert!(out_b.status.success());
    let a = std::fs::read(tmp.path().join("a/inventory.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("b/inventory.csv")).unwrap();
    assert_eq!(a, b);
    let meta_a = std::fs::read(tmp.path().join("a/inventory.meta")).unwrap();
    let meta_b = std::fs::read(tmp.path().join("b/inventory.meta")).unwrap();
    assert_eq!(meta_a, meta_b);
}

#[test]
fn different_seed_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    passalloc(&["run", "inventory", "--seed", "5", "--out", "a"], tmp.path());
    passalloc(&["run", "inventory", "--seed", "6", "--out", "b"], tmp.path());
    let a = std::fs::read(tmp.path().join("a/inventory.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("b/inventory.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn missing_config_file_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = passalloc(&["run", "missing.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing.toml"), "stderr: {stderr}");
}

#[test]
fn unknown_preset_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = passalloc(&["run", "not_a_preset"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn custom_config_runs_and_reports_three_phases() {
    let tmp = tempfile::tempdir().unwrap();
    let config = r#"
name = "tiny"
seed = 3
dt = 0.01
horizon = 40.0

[graph]
edges = [[1, 2]]

[controller]
d_eps_initial = false

[[agent]]
plant = { kind = "single_integrator" }
cost = { kind = "quadratic", a = 0.5, b = 0.0, c = 0.0 }
disturbance = { d0 = 1.0, freqs = [2.0], onset = 10.0 }

[[agent]]
plant = { kind = "single_integrator" }
cost = { kind = "quadratic", a = 0.5, b = 0.0, c = 0.0 }
disturbance = { d0 = 3.0 }

[[event]]
time = 20.0
action = "enable_d_eps"
"#;
    std::fs::write(tmp.path().join("tiny.toml"), config).unwrap();
    let out = passalloc(&["run", "tiny.toml", "--out", "runs"], tmp.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "stdout: {stdout}");
    assert!(stdout.contains("PASS"));

    let report = passalloc(&["report", "runs/tiny.csv"], tmp.path());
    assert!(report.status.success());
    let text = String::from_utf8_lossy(&report.stdout);
    assert!(text.contains("pre-onset"), "report: {text}");
    assert!(text.contains("disturbed"));
    assert!(text.contains("post-rejection"));
    assert!(text.contains("boundaries at [10.0, 20.0]"));
}

#[test]
fn report_without_sidecar_is_single_phase() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("plain.csv"),
        "t,y1,u1,lambda1,z1,err_opt,err_consensus\n0.0,1.0,0.0,0.0,0.0,0.0,0.0\n1.0,1.0,0.0,0.0,0.0,0.0,0.0\n",
    )
    .unwrap();
    let out = passalloc(&["report", "plain.csv"], tmp.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("full-run"));
    assert!(text.contains("no sidecar"));
}

#[test]
fn truncated_csv_fails_with_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("broken.csv"),
        "t,y1,u1,lambda1,z1,err_opt,err_consensus\n0.0,1.0,0.0,0.0,0.0,0.0,0.0\n1.0,1.5\n",
    )
    .unwrap();
    let out = passalloc(&["report", "broken.csv"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(":3"), "stderr: {stderr}");
}

#[test]
fn ablation_parks_away_from_the_optimum() {
    let tmp = tempfile::tempdir().unwrap();
    let out = passalloc(
        &["run", "baseline_ablation", "--seed", "7", "--out", "runs"],
        tmp.path(),
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("informational only"));
    // The negative control must visibly miss the optimum (it converges to
    // the equilibrium of the feedforward-less dynamics instead).
    let meta = std::fs::read_to_string(tmp.path().join("runs/baseline_ablation.meta")).unwrap();
    assert!(meta.contains("name = \"baseline_ablation\""));
    let csv = std::fs::read_to_string(tmp.path().join("runs/baseline_ablation.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    let y1: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!((y1 - 4.57).abs() > 0.5, "ablation y1 = {y1}");
}

#[test]
fn gamma_below_bound_is_rejected_without_override() {
    let tmp = tempfile::tempdir().unwrap();
    let config = r#"
[graph]
edges = [[1, 2]]

[controller]
gamma = 0.1

[[agent]]
plant = { kind = "single_integrator" }
cost = { kind = "quadratic", a = 0.5, b = 0.0, c = 0.0 }
disturbance = { d0 = 1.0 }

[[agent]]
plant = { kind = "single_integrator" }
cost = { kind = "quadratic", a = 0.5, b = 0.0, c = 0.0 }
disturbance = { d0 = 3.0 }
"#;
    std::fs::write(tmp.path().join("low.toml"), config).unwrap();
    let out = passalloc(&["run", "low.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bound"), "stderr: {stderr}");

    // --override-gamma forces it through.
    let out = passalloc(
        &["run", "low.toml", "--override-gamma", "0.1", "--horizon", "200"],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}
