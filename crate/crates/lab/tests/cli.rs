use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use overparam_lab::dataset::{gen_dataset, read_csv, write_csv, LabelMode};
use overparam_lab::grid::{emit_grid, read_grid_csv, EmitOptions, GRID_HEADER};
use overparam_lab::sweep::{run_sweep, LearningRate, SweepConfig};
use overparam_core::Activation;

fn lab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_overparam-lab"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("OVERPARAM_LAB_WORKERS")
        .output()
        .expect("spawn overparam-lab")
}

#[test]
fn dataset_csv_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_dataset(17, 6, &LabelMode::Gaussian, 42).unwrap();
    let path = dir.path().join("d.csv");
    write_csv(&data, &path).unwrap();
    assert_eq!(read_csv(&path, false).unwrap(), data);
}

#[test]
fn unnormalized_file_needs_flag() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("raw.csv");
    fs::write(&path, "3,4,1.5\n0,2,-1\n").unwrap();
    assert!(read_csv(&path, false).is_err());
    let data = read_csv(&path, true).unwrap();
    assert_eq!(data.x().row(0), &[0.6, 0.8]);
    assert_eq!(data.y(), &[1.5, -1.0]);
    fs::write(&path, "1,0,1\n0,1\n").unwrap();
    assert!(read_csv(&path, true).is_err());
}

#[test]
fn label_file_mode() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("y.txt");
    fs::write(&labels, "1.0\n2.0\n3.0\n").unwrap();
    let data = gen_dataset(3, 4, &LabelMode::File(labels.clone()), 0).unwrap();
    assert_eq!(data.y(), &[1.0, 2.0, 3.0]);
    assert!(gen_dataset(4, 4, &LabelMode::File(labels), 0).is_err());
}

fn tiny_sweep() -> SweepConfig {
    SweepConfig {
        n: 8,
        d_values: vec![1, 4],
        k_values: vec![2, 6],
        trials: 2,
        activation: Activation::Softplus,
        learning_rate: LearningRate::Theorem,
        max_iters: 300,
        success_threshold: 5e-2,
        base_seed: 1,
        workers: 2,
    }
}

#[test]
fn grid_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let result = run_sweep(&tiny_sweep(), true).unwrap();
    let files = emit_grid(&result, dir.path(), EmitOptions { svg: true, traces: true }).unwrap();
    let csv = fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(GRID_HEADER));
    assert_eq!(lines.count(), 4);
    let back = read_grid_csv(&dir.path().join("grid.csv")).unwrap();
    let grid = result.grid();
    assert_eq!(back.len(), grid.len());
    for ((k, d), p) in grid {
        assert_eq!(back[&(k, d)], (p, 2));
    }
    let svg = fs::read_to_string(dir.path().join("grid.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    assert!(dir.path().join("traces/cell_k6_d4_t1.csv").exists());
    assert!(files.iter().all(|f| f.exists()));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_echo"]["n"], 8);
    assert!(manifest["config_echo"].get("workers").is_none());
}

#[test]
fn success_probabilities_are_multiples_of_trials() {
    let result = run_sweep(&tiny_sweep(), false).unwrap();
    for c in &result.cells {
        let scaled = c.success_probability * c.trials as f64;
        assert_eq!(scaled, scaled.round());
        assert!((0.0..=1.0).contains(&c.success_probability));
    }
}

#[test]
fn underparameterized_cell_fails() {
    let cfg = SweepConfig {
        n: 50,
        d_values: vec![1],
        k_values: vec![1],
        trials: 10,
        ..tiny_sweep()
    };
    let r = run_sweep(&cfg, false).unwrap();
    assert!(r.cells[0].success_probability <= 0.2);
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(dir.path(), &["train", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("--max-iters"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["sweep", "--bogus"][..],
        &["sweep", "--k", "5..2"][..],
        &["frobnicate"][..],
        &["train", "--rule", "fixed"][..],
    ] {
        let out = lab(dir.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn missing_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(dir.path(), &["spectra", "--data", "missing.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing.csv"), "{err}");
}

#[test]
fn commands_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(lab(p, &["gen-data", "--n", "6", "--d", "3"]).status.code(), Some(0));
    let data = p.join("data.csv").to_string_lossy().into_owned();
    let ok = |args: &[&str]| assert_eq!(lab(p, args).status.code(), Some(0), "{args:?}");
    ok(&["train", "--data", &data, "--k", "40", "--max-iters", "50"]);
    ok(&["--format", "csv", "train", "--data", &data, "--k", "40", "--max-iters", "50"]);
    ok(&["spectra", "--data", &data, "--samples", "500"]);
    ok(&["bounds", "--data", &data, "--k", "40"]);
    ok(&["fit-output", "--data", &data, "--k", "60", "--samples", "500"]);
    ok(&["sweep", "--n", "6", "--k", "2,4", "--d", "2..3", "--trials", "1", "--max-iters", "50"]);
    for f in ["train.json", "train.csv", "trace.csv", "spectra.json", "bounds.json", "fit_output.json", "grid.csv", "grid.svg", "manifest.json", "timing.json"] {
        assert!(p.join(f).exists(), "{f}");
    }
    let trace = fs::read_to_string(p.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,residual,frob_dist,spec_dist,path_length\n"));
    let bounds: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("bounds.json")).unwrap()).unwrap();
    assert!(bounds["kappa"].as_f64().unwrap() > 0.0);
}

#[test]
fn workers_env_var_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_overparam-lab"))
        .args(["--out"])
        .arg(dir.path())
        .args(["sweep", "--n", "4", "--k", "2", "--d", "2", "--trials", "1", "--max-iters", "5"])
        .env("OVERPARAM_LAB_WORKERS", "3")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let timing: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("timing.json")).unwrap()).unwrap();
    assert_eq!(timing["workers"], 3);
}
