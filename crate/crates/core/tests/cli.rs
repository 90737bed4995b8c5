use std::path::Path;
use std::process::{Command, Output};

fn mfi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfi"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .arg("--no-plots")
        .output()
        .expect("spawn mfi")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const SHORT_RUN: [&str; 6] = [
    "--set",
    "simulate.segment_ms=[0.5]",
    "--set",
    "analysis.psd=false",
    "--set",
    "integrator.sample_interval_us=1.0",
];

#[test]
fn steady_writes_branches_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mfi(tmp.path(), &["steady", "--set", "steady.omega_a_mhz={min=0.0,max=0.5,points=3}"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(tmp.path(), "branches.csv");
    assert!(csv.starts_with("omega_a_mhz,root_index,s_mhz,rho11,rho22,rho33,rho44,residual,stability_verdict"));
    assert!(csv.lines().count() >= 4);
    let manifest: serde_json::Value = serde_json::from_str(&read(tmp.path(), "manifest.json")).unwrap();
    assert_eq!(manifest["subcommand"], "steady");
}

#[test]
fn threshold_without_shift_is_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mfi(tmp.path(), &["threshold", "--set", "model.delta_s_mhz=0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(tmp.path(), "threshold.csv").trim_end(), "f_l_ghz,threshold_mw");
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mfi(tmp.path(), &["steady", "--set", "model.delta3_mhzz=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("delta3_mhzz"));
}

#[test]
fn analyze_without_input_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mfi(tmp.path(), &["analyze"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_is_deterministic_and_rerunnable_from_manifest() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let mut args = vec!["simulate", "--seed", "7"];
    args.extend(SHORT_RUN);
    assert!(mfi(a.path(), &args).status.success());
    assert!(mfi(b.path(), &args).status.success());
    let manifest = a.path().join("manifest.json");
    assert!(mfi(c.path(), &["simulate", "--config", manifest.to_str().unwrap()]).status.success());
    let first = read(a.path(), "trajectory.csv");
    assert_eq!(first, read(b.path(), "trajectory.csv"));
    assert_eq!(first, read(c.path(), "trajectory.csv"));
}

#[test]
fn analyze_reads_binary_trajectory() {
    let sim = tempfile::tempdir().unwrap();
    let mut args = vec!["simulate", "--set", "output.format=\"binary\""];
    args.extend(SHORT_RUN);
    let out = mfi(sim.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let input = sim.path().join("trajectory.bin");
    assert!(input.exists());
    let an = tempfile::tempdir().unwrap();
    let out = mfi(an.path(), &["analyze", "--input", input.to_str().unwrap(), "--set", "analysis.psd=false"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&read(an.path(), "summary.json")).unwrap();
    assert!(summary.is_object());
}
