use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pdpa::io::{self, Manifest};

fn pdpa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdpa")).args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn out_arg(dir: &Path) -> &str {
    dir.to_str().unwrap()
}

#[test]
fn run_writes_series_snapshots_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdpa(&["run", "--size", "12", "--steps", "40", "--snapshot-steps", "0,40", "--out", out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let rows = io::read_timeseries(&dir.path().join("timeseries.csv")).unwrap();
    assert_eq!(rows.first().unwrap().step, 0);
    assert_eq!(rows.last().unwrap().step, 40);
    let text = fs::read_to_string(dir.path().join("timeseries.csv")).unwrap();
    assert!(text.starts_with(&io::timeseries_header()));
    assert!(!text.contains('\r'));

    let manifest = Manifest::read(&dir.path().join(io::MANIFEST_NAME)).unwrap();
    assert_eq!(manifest.command, "run");
    assert_eq!(manifest.files.len(), 7);
    assert!(!manifest.args.iter().any(|a| a == "--out"));
    for name in ["snapshot_step0.alpha.csv", "snapshot_step40.strategy.csv"] {
        assert!(manifest.files.iter().any(|f| f.name == name), "{name}");
    }
}

#[test]
fn strict_violation_exits_one_and_names_the_range() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdpa(&["run", "--T", "2.5", "--out", out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("1 < T < 2"), "{}", stderr(&out));
    assert!(!dir.path().join("timeseries.csv").exists());
}

#[test]
fn sweep_mode_accepts_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["run", "--T", "2", "--L", "0", "--size", "8", "--steps", "5", "--sweep-mode", "--out", out_arg(dir.path())];
    assert_eq!(pdpa(&args).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(pdpa(&["run", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(pdpa(&["launch"]).status.code(), Some(1));
    assert_eq!(pdpa(&["run", "--rule", "sideways"]).status.code(), Some(1));
    assert_eq!(pdpa(&["run", "--size", "2"]).status.code(), Some(1));
    assert_eq!(pdpa(&["--version"]).status.code(), Some(0));
}

#[test]
fn bad_config_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    fs::write(&config, "lattice-size = 40\n").unwrap();
    let out = pdpa(&["run", "--config", config.to_str().unwrap(), "--out", out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("lattice-size"), "{}", stderr(&out));
}

#[test]
fn missing_config_file_is_a_runtime_error() {
    let out = pdpa(&["run", "--config", "/nonexistent/pdpa.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/pdpa.toml"));
}

#[test]
fn config_file_drives_a_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.toml");
    fs::write(&config, "size = \"10x8\"\nsteps = 30\nT = [1.2, 1.8]\nL = 0.3\nreplicates = 2\nscheme = \"pd,pdpa\"\nrule = \"sync\"\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = pdpa(&["sweep-t", "--config", config.to_str().unwrap(), "--out", out_arg(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let table = fs::read_to_string(out_dir.join("sweep_t.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], io::SWEEP_HEADER);
    assert_eq!(lines.len(), 1 + 2 * 2);
    assert!(lines[1].starts_with("pd,sync,1.200000000,0.300000000,"));
    let raw = fs::read_to_string(out_dir.join("replicates.csv")).unwrap();
    assert_eq!(raw.lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn sweep_tl_writes_one_heatmap_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdpa(&[
        "sweep-tl", "--size", "8", "--steps", "10", "--T", "1:2:0.5", "--L", "0,1", "--replicates", "2", "--out",
        out_arg(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for name in ["heatmap_opd_sync.csv", "heatmap_opd_async.csv", "heatmap_pdpa_sync.csv", "heatmap_pdpa_async.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 2, "{name}");
    }
}

#[test]
fn snapshot_defaults_to_the_final_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdpa(&["snapshot", "--size", "9", "--steps", "25", "--out", out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let grid = io::read_grid(&dir.path().join("snapshot_step25.alpha.csv")).unwrap();
    assert_eq!(grid.len(), 9);
    assert!(grid.iter().all(|row| row.len() == 9));
}

#[test]
fn selftest_passes() {
    let out = pdpa(&["selftest"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 5);
}
