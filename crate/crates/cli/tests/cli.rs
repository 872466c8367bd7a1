//! Black-box tests of the command-line interface: exit codes, output files,
//! and the frozen first samples of the shipped reproduction config.

use std::path::PathBuf;
use std::process::{Command, Output};

use decentlam::{parse_config, run_experiment, trajectory_csv};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_decentlam"))
}

fn config_path(name: &str) -> String {
    format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("decentlam-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn run_args(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary must spawn")
}

fn write_cfg(tag: &str, body: &str) -> (PathBuf, PathBuf) {
    let dir = tmp_dir(tag);
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("case.cfg");
    std::fs::write(&path, body).unwrap();
    (dir, path)
}

const TINY_CFG: &str = "\
[problem]
n = 4
d = 3
m = 6
hetero = 0.1
noise_mag = 0.01
seed = 5

[topology]
kind = ring

[algo.DSGD]
gamma = 0.005
beta = 0

[run]
max_iters = 200
metric_every = 50
";

#[test]
fn successful_run_exits_zero_and_writes_csvs() {
    let (dir, cfg) = write_cfg("ok", TINY_CFG);
    let out_dir = dir.join("out");
    let out = run_args(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("trajectory.csv").exists());
    // bias_mode defaults to off, so no bias table.
    assert!(!out_dir.join("bias.csv").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn invalid_config_exits_one_and_lists_every_issue() {
    let body = TINY_CFG.replace("gamma = 0.005", "gamma = -1").replace("beta = 0", "beta = 1.5");
    let (dir, cfg) = write_cfg("invalid", &body);
    let out = run_args(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gamma"), "stderr: {err}");
    assert!(err.contains("beta"), "stderr: {err}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn divergent_run_exits_two() {
    // gamma far above 2/L on this instance: iterates blow past the guard.
    let body = TINY_CFG.replace("gamma = 0.005", "gamma = 10");
    let (dir, cfg) = write_cfg("divergent", &body);
    let out = run_args(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn missing_config_file_exits_three() {
    let out = run_args(&["run", "--config", "/nonexistent/nowhere.cfg"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let out = run_args(&["run", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run_args(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let out = run_args(&["topo", "--kind", "pentagram", "--n", "8"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn topo_prints_spectral_summary_and_emits_the_matrix() {
    let dir = tmp_dir("topo");
    std::fs::create_dir_all(&dir).unwrap();
    let w_path = dir.join("w.csv");
    let out = run_args(&[
        "topo",
        "--kind",
        "ring",
        "--n",
        "8",
        "--emit-w",
        w_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("rho"), "stdout: {text}");
    let w_text = std::fs::read_to_string(&w_path).unwrap();
    assert_eq!(w_text.lines().count(), 8);
    assert_eq!(w_text.lines().next().unwrap().split(',').count(), 8);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn malformed_sweep_axis_exits_one() {
    let (dir, cfg) = write_cfg("axis", TINY_CFG);
    let out = run_args(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--axis",
        "no-equals-sign",
        "--out",
        dir.join("s").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let (dir, cfg) = write_cfg("sweepok", TINY_CFG);
    let out_dir = dir.join("s");
    let out = run_args(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--axis",
        "algo.DSGD.gamma=0.002,0.004",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 3, "header plus two cells:\n{text}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn quick_verification_passes_through_the_cli() {
    let out = run_args(&["verify", "--quick"]);
    assert!(out.status.success(), "stdout: {}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("properties passed"), "stdout: {text}");
    assert!(!text.contains("FAIL"), "stdout: {text}");
}

#[test]
fn shipped_config_first_samples_match_the_frozen_golden() {
    let text = std::fs::read_to_string(config_path("fig2.cfg")).unwrap();
    let mut cfg = parse_config(&text).unwrap();
    cfg.bias_mode = false; // the golden covers the trajectory head only
    let out = run_experiment(&cfg).unwrap();
    let truncated: Vec<_> = out
        .trajectories
        .into_iter()
        .map(|mut t| {
            t.records.truncate(10);
            t
        })
        .collect();
    let produced = trajectory_csv(&truncated);
    let golden = include_str!("golden/fig2_first10.csv");
    assert_eq!(
        produced, golden,
        "first ten samples per algorithm must stay byte-identical to the frozen golden"
    );
}
