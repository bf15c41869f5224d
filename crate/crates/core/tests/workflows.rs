use std::fs;

use subridge::commands::{cmd_sim_config, cmd_theory_surface, tune_table, SurfaceArgs, SurfaceModel, Table, TuneArgs};
use subridge::montecarlo::{generate_ar1, run_experiment, ModelKind, SimConfig};
use subridge::theory::{asymptotic_risk, AspectPair, EnsembleSize};

fn surface_args(lambdas: Vec<f64>, phi_s: Vec<f64>) -> SurfaceArgs {
    SurfaceArgs {
        phi: 0.1,
        model: SurfaceModel::Ar1,
        rho_ar1: 0.5,
        p_ref: 500,
        rho2: 1.0,
        sigma2: 1.0,
        lambdas,
        phi_s,
        ensemble_size: EnsembleSize::Infinite,
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[test]
fn surface_matches_pointwise_risk() {
    let dir = tempfile::tempdir().unwrap();
    let args = surface_args(linspace(0.0, 0.5, 51), linspace(0.1, 10.0, 51));
    cmd_theory_surface(&args, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("risk_surface.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 52);
    let model = args.model_spec().unwrap();
    for (i, line) in lines[1..].iter().enumerate() {
        let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells.len(), 52);
        assert_eq!(cells[0], args.lambdas[i]);
        for (j, &v) in cells[1..].iter().enumerate() {
            let expect = AspectPair::new(0.1, args.phi_s[j])
                .and_then(|a| asymptotic_risk(args.lambdas[i], EnsembleSize::Infinite, a, &model))
                .map(|r| r.total);
            match expect {
                Ok(r) => assert!((v - r).abs() <= 1e-12 * r.max(1.0), "cell ({i}, {j})"),
                Err(_) => assert!(v.is_nan()),
            }
        }
    }
}

#[test]
fn single_cell_surface() {
    let dir = tempfile::tempdir().unwrap();
    cmd_theory_surface(&surface_args(vec![0.3], vec![2.0]), dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("risk_surface.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 2);
}

#[test]
fn desk_scale_sweep_tracks_theory() {
    let dir = tempfile::tempdir().unwrap();
    let config = SimConfig {
        phi: 0.5,
        p: 100,
        reps: 20,
        model: ModelKind::Ar1,
        rho_ar1: 0.5,
        rho2: None,
        sigma2: 1.0,
        lambda_grid: vec![0.1, 1.0],
        phi_s_grid: Some(vec![0.5, 1.0, 2.0, 4.0]),
        k_grid: None,
        m_list: vec![1],
        master_seed: 2,
        test_size: None,
    };
    cmd_sim_config(&config, dir.path()).unwrap();
    let result = run_experiment(&config).unwrap();
    for a in &result.aggregate {
        assert_eq!(a.status, "ok");
        let z = (a.gcv_mean - a.risk_theory).abs() / a.gcv_stderr;
        assert!(z <= 3.0, "k={} lambda={} gcv {} theory {} z {z}", a.k, a.lambda, a.gcv_mean, a.risk_theory);
    }
    let again = tempfile::tempdir().unwrap();
    cmd_sim_config(&config, again.path()).unwrap();
    for f in ["sim_tidy.csv", "sim_aggregate.csv"] {
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(again.path().join(f)).unwrap());
    }
}

#[test]
fn subsample_tuning_competes_with_ridge_on_csv() {
    let (n, p) = (2000, 200);
    let (data, _) = generate_ar1(n, p, 0.5, 1.0, 31).unwrap();
    let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    let mut buf = Vec::new();
    Table::from_dataset(&data, &names, "y").unwrap().write_csv(&mut buf).unwrap();
    let table = Table::read_csv(&buf[..]).unwrap();
    let args = TuneArgs {
        target: "y".into(),
        lambda: 0.0,
        m: 20,
        nu: 0.5,
        seed: 6,
        holdout: 0.5,
        baseline: true,
        extrapolate: None,
    };
    let (report, _) = tune_table(table, &args).unwrap();
    let base = report.baseline_holdout_mse.unwrap();
    let rel = (report.holdout_mse - base).abs() / base;
    assert!(rel <= 0.10, "subsample {} ridge {base}", report.holdout_mse);
}
