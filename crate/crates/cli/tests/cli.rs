//! End-to-end tests driving the compiled binary: pipeline handoffs, config
//! precedence, determinism, and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn trajmark(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajmark"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}

#[test]
fn pipeline_roundtrip_accuses_the_leaked_analyzer() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_ok(&trajmark(
        &["synth", "--out", "syn", "-s", "n=10", "-s", "count=8", "-s", "length=15", "-s", "seed=3"],
        dir,
    ));
    assert_ok(&trajmark(&["build-model", "--out", "model", "-s", "n=10", "--cells", "syn/cells.csv"], dir));
    assert_ok(&trajmark(
        &[
            "fingerprint", "--out", "fp", "-s", "n=10", "-s", "analyzers=3",
            "--cells", "syn/cells.csv",
        ],
        dir,
    ));
    assert_ok(&trajmark(
        &[
            "attack", "--out", "atk", "-s", "n=10", "-s", "attack=random_flip", "-s", "p_r=0.2",
            "--copy", "fp/copy_001.csv",
        ],
        dir,
    ));
    let det = trajmark(
        &[
            "detect", "--out", "det", "-s", "n=10", "--leaked", "atk/leaked.csv",
            "--copy", "fp/copy_000.csv", "--copy", "fp/copy_001.csv", "--copy", "fp/copy_002.csv",
        ],
        dir,
    );
    assert_ok(&det);
    let manifest = fs::read_to_string(dir.join("det/manifest.json")).unwrap();
    assert!(manifest.contains("\"final_accused\": \"1\""), "manifest: {manifest}");
    assert!(dir.join("det/report.csv").is_file());
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.cfg"), "n=6\ncount=4\nlength=9\nseed=1\n").unwrap();
    assert_ok(&trajmark(&["synth", "--out", "a", "--config", "run.cfg"], dir));
    assert_ok(&trajmark(&["synth", "--out", "b", "--config", "run.cfg", "-s", "length=5"], dir));
    let a = fs::read_to_string(dir.join("a/cells.csv")).unwrap();
    let b = fs::read_to_string(dir.join("b/cells.csv")).unwrap();
    assert_eq!(a.lines().count(), 1 + 4 * 9);
    assert_eq!(b.lines().count(), 1 + 4 * 5, "flag must win over the file");
}

#[test]
fn identical_seeds_give_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let args = |out: &str| {
        [
            "experiment".to_string(), "--out".into(), out.into(),
            "-s".into(), "n=8".into(), "-s".into(), "count=6".into(),
            "-s".into(), "length=12".into(), "-s".into(), "analyzers=5".into(),
            "-s".into(), "trials=8".into(), "-s".into(), "attack=random_flip".into(),
        ]
    };
    for out in ["x", "y"] {
        let argv: Vec<String> = args(out).to_vec();
        let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
        assert_ok(&trajmark(&argv, dir));
    }
    let x = fs::read(dir.join("x/robustness.csv")).unwrap();
    let y = fs::read(dir.join("y/robustness.csv")).unwrap();
    assert_eq!(x, y, "same config and seed must reproduce byte-identical tables");
}

#[test]
fn config_errors_exit_2_and_data_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let bad_cfg = trajmark(&["synth", "--out", "o", "-s", "n=not_a_number"], dir);
    assert_eq!(bad_cfg.status.code(), Some(2));

    let missing_key = trajmark(&["synth", "--out", "o"], dir);
    assert_eq!(missing_key.status.code(), Some(2), "missing n is a config error");

    assert_ok(&trajmark(&["synth", "--out", "syn", "-s", "n=10", "-s", "count=2", "-s", "length=4"], dir));
    let off_grid = trajmark(&["build-model", "--out", "m", "-s", "n=3", "--cells", "syn/cells.csv"], dir);
    assert_eq!(off_grid.status.code(), Some(3), "off-grid cells are a data error");
}

#[test]
fn preprocess_discretizes_points() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("points.csv"),
        "traj_id,seq,x,y\na,0,0.4,0.4\na,1,3.6,0.4\nb,0,9.9,9.9\n",
    )
    .unwrap();
    assert_ok(&trajmark(
        &[
            "preprocess", "--out", "p", "--points", "points.csv",
            "-s", "n=10", "-s", "x_min=0", "-s", "y_min=0", "-s", "x_max=10", "-s", "y_max=10",
        ],
        dir,
    ));
    let cells = fs::read_to_string(dir.join("p/cells.csv")).unwrap();
    let lines: Vec<&str> = cells.lines().collect();
    assert_eq!(lines[1], "a,0,0,0");
    assert_eq!(lines[2], "a,1,3,0");
    assert_eq!(lines[3], "b,0,9,9");
}
