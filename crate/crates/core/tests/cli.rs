use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use subridge::commands::{RunManifest, Table};
use subridge::montecarlo::generate_ar1;

fn subridge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subridge")).args(args).output().expect("binary runs")
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn theory_surface_writes_grid_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("surface");
    let res = subridge(&[
        "theory-surface",
        "--phi",
        "0.1",
        "--lambda",
        "0:1:5",
        "--phi-s",
        "0.1:10:7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("risk_surface.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 8);
    let m = manifest(&out);
    assert_eq!(m.command, "theory-surface");
    assert!(m.config["markers"]["lambda_star"].as_f64().unwrap() > 0.0);
}

#[test]
fn theory_surface_warns_about_undefined_cells() {
    let dir = tempfile::tempdir().unwrap();
    let res = subridge(&[
        "theory-surface",
        "--phi",
        "0.5",
        "--model",
        "isotropic",
        "--lambda",
        "0",
        "--phi-s",
        "1",
        "--m",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("warning"));
}

#[test]
fn sim_round_trip_and_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    fs::write(
        &cfg,
        "phi = 0.5\np = 20\nreps = 2\nsigma2 = 1.0\nlambda_grid = [0.0, 0.5]\nphi_s_grid = [2.0, inf]\nm_list = [1, 3]\nmaster_seed = 1\n",
    )
    .unwrap();
    let out = dir.path().join("sim");
    let res = subridge(&["sim", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let tidy = fs::read_to_string(out.join("sim_tidy.csv")).unwrap();
    assert_eq!(tidy.lines().count(), 1 + 2 * 2 * 2 * 2);
    assert_eq!(fs::read_to_string(out.join("sim_aggregate.csv")).unwrap().lines().count(), 1 + 8);
    assert_eq!(manifest(&out).master_seed, Some(1));

    fs::write(&cfg, "phi = 0.5\np = 20\nreps = 0\nsigma2 = 1.0\nlambda_grid = [0.0]\nk_grid = [10]\nm_list = [1]\nmaster_seed = 1\n").unwrap();
    let res = subridge(&["sim", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 3"));
}

#[test]
fn tune_on_generated_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (d, _) = generate_ar1(200, 20, 0.5, 1.0, 8).unwrap();
    let names: Vec<String> = (0..20).map(|j| format!("x{j}")).collect();
    let mut buf = Vec::new();
    Table::from_dataset(&d, &names, "y").unwrap().write_csv(&mut buf).unwrap();
    let data = dir.path().join("data.csv");
    fs::write(&data, buf).unwrap();
    let out = dir.path().join("tune");
    let res = subridge(&[
        "tune",
        "--data",
        data.to_str().unwrap(),
        "--target",
        "y",
        "--m",
        "10",
        "--seed",
        "4",
        "--baseline",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("tune.json")).unwrap()).unwrap();
    assert_eq!(report["n_holdout"], 40);
    assert!(report["tune"]["k_hat"].as_u64().unwrap() > 0);
    assert!(out.join("tune_path.csv").exists());

    let res = subridge(&["tune", "--data", data.to_str().unwrap(), "--target", "nope", "--out", out.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("'nope'"));
}

#[test]
fn verify_subset_and_missing_work_dir() {
    let res = subridge(&["verify", "--only", "fixed-point", "--only", "10"]);
    assert!(res.status.success());
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 2);

    let res = subridge(&["verify", "--only", "1", "--work-dir", "/no/such/dir"]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("does not exist"));
}
