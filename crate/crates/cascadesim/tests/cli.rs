use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn cascadesim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cascadesim")).args(args).output().unwrap()
}

#[test]
fn run_then_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let config = data("configs/cascade1.toml");
    let o = cascadesim(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "3",
        "--policy",
        "proteus-like",
        "--servers",
        "12",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let line = String::from_utf8(o.stdout).unwrap();
    assert!(line.contains("proteus-like") && line.contains("violation_ratio=") && line.contains("wall="));
    let plans = std::fs::read_to_string(out.join("plans.csv")).unwrap();
    assert!(plans.lines().skip(1).all(|l| l.split(',').nth(7).unwrap().parse::<u32>().unwrap() <= 12));

    let o = cascadesim(&["plot", out.to_str().unwrap()]);
    assert!(o.status.success());
    let svg = std::fs::read_to_string(out.join("plot.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
}

#[test]
fn missing_trace_fails_clearly() {
    let o = cascadesim(&["run", "--trace", "/no/such/trace.txt"]);
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("/no/such/trace.txt") && err.contains("trace"), "{err}");
}

#[test]
fn sweep_without_grid_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = data("traces/trace_4to32qps.txt");
    let o = cascadesim(&["sweep", "--trace", trace.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty"));
}

#[test]
fn sweep_over_overprovision() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = data("traces/trace_4to32qps.txt");
    let o = cascadesim(&[
        "sweep",
        "--trace",
        trace.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
        "--vary",
        "overprovision=1.0,1.05,1.1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn bad_override_is_rejected() {
    let o = cascadesim(&["run", "--set", "servers=lots"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("servers"));
}
