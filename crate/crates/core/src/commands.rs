//! File-producing entry points behind the `subridge` binary: risk surfaces,
//! simulation sweeps and GCV tuning on CSV data. Every command writes its
//! outputs atomically and finishes with a `manifest.json`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{ensemble_fit, predict, Dataset, RidgePath};
use crate::error::{Error, Result};
use crate::montecarlo::{run_experiment, SimConfig};
use crate::spectra::{ar1_model, ModelSpec};
use crate::theory::{
    contour_lambda_for_phis, equivalence_path, optimal_lambda, optimal_subsample, risk_surface, AspectPair,
    ContourPoint, EnsembleSize,
};
use crate::tuning::{cell_seed, default_lambda_grid, lambda_hat, subsample_grid, tune_k, tune_lambda, TuneResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub master_seed: Option<u64>,
    pub version: String,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_seconds: f64,
}

/// Parses `lo:hi:count` (inclusive, evenly spaced), a comma list, or a
/// single number.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let num = |s: &str| {
        let t = s.trim();
        match t {
            "inf" | "Inf" | "infinity" => Ok(f64::INFINITY),
            _ => t.parse::<f64>().map_err(|_| Error::param(format!("'{t}' is not a number in grid '{spec}'"))),
        }
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let grid = match parts.as_slice() {
        [lo, hi, count] => {
            let (lo, hi) = (num(lo)?, num(hi)?);
            let count: usize = count.trim().parse().map_err(|_| Error::param(format!("bad count in grid '{spec}'")))?;
            if count == 0 || !lo.is_finite() || !hi.is_finite() || hi < lo {
                return Err(Error::param(format!("grid '{spec}' needs finite lo <= hi and count >= 1")));
            }
            if count == 1 {
                vec![lo]
            } else {
                let last = (count - 1) as f64;
                (0..count).map(|i| lo + (hi - lo) * i as f64 / last).collect()
            }
        }
        [single] => single.split(',').map(num).collect::<Result<Vec<f64>>>()?,
        _ => return Err(Error::param(format!("grid '{spec}' is not lo:hi:count or a list"))),
    };
    if grid.iter().any(|v| v.is_nan()) {
        return Err(Error::param(format!("grid '{spec}' contains NaN")));
    }
    Ok(grid)
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn finish(
    dir: &Path,
    command: &str,
    config: serde_json::Value,
    seed: Option<u64>,
    mut outputs: Vec<PathBuf>,
    start: Instant,
) -> Result<RunManifest> {
    let manifest_path = dir.join(MANIFEST_FILE);
    outputs.push(manifest_path.clone());
    let manifest = RunManifest {
        command: command.to_string(),
        config,
        master_seed: seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write_atomic(&manifest_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceModel {
    Ar1,
    Isotropic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceArgs {
    pub phi: f64,
    pub model: SurfaceModel,
    pub rho_ar1: f64,
    pub p_ref: usize,
    /// Isotropic signal energy.
    pub rho2: f64,
    pub sigma2: f64,
    pub lambdas: Vec<f64>,
    pub phi_s: Vec<f64>,
    pub ensemble_size: EnsembleSize,
}

impl SurfaceArgs {
    pub fn model_spec(&self) -> Result<ModelSpec> {
        match self.model {
            SurfaceModel::Ar1 => Ok(ar1_model(self.rho_ar1, self.p_ref, self.sigma2)?.model),
            SurfaceModel::Isotropic => ModelSpec::isotropic(self.rho2, self.sigma2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMarkers {
    pub lambda_star: f64,
    pub phi_s_star: f64,
    pub risk_star: f64,
    /// Eleven points on the segment joining `(λ*, φ)` and `(0, φs*)`,
    /// empty when either optimum is the null predictor.
    pub segment: Vec<ContourPoint>,
    pub nan_cells: Vec<(usize, usize)>,
}

pub struct SurfaceOutput {
    pub manifest: RunManifest,
    pub markers: SurfaceMarkers,
}

/// Risk surface CSV plus a manifest carrying the optimum markers.
pub fn cmd_theory_surface(args: &SurfaceArgs, out_dir: &Path) -> Result<SurfaceOutput> {
    let start = Instant::now();
    if args.lambdas.is_empty() || args.phi_s.is_empty() {
        return Err(Error::param("lambda and phi_s grids must be non-empty"));
    }
    if args.lambdas.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::param("lambda grid must be nonnegative"));
    }
    AspectPair::full(args.phi)?;
    let model = args.model_spec()?;
    ensure_dir(out_dir)?;
    let surface = risk_surface(&args.lambdas, &args.phi_s, args.phi, args.ensemble_size, &model);
    let mut buf = Vec::new();
    surface.write_csv(&mut buf)?;
    let csv_path = out_dir.join("risk_surface.csv");
    write_atomic(&csv_path, &buf)?;

    let l = optimal_lambda(args.phi, &model)?;
    let s = optimal_subsample(args.phi, &model)?;
    let segment = if l.argument.is_finite() && s.argument.is_finite() {
        let lambda_bar = contour_lambda_for_phis(s.argument, args.phi, &model.h).unwrap_or(l.argument);
        (0..=10)
            .map(|i| equivalence_path(lambda_bar, s.argument, args.phi, i as f64 / 10.0))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let markers = SurfaceMarkers {
        lambda_star: l.argument,
        phi_s_star: s.argument,
        risk_star: l.risk.min(s.risk),
        segment,
        nan_cells: surface.nan_cells(),
    };
    let config = serde_json::json!({ "args": args, "markers": markers });
    let manifest = finish(out_dir, "theory-surface", config, None, vec![csv_path], start)?;
    Ok(SurfaceOutput { manifest, markers })
}

pub const TIDY_FILE: &str = "sim_tidy.csv";
pub const AGGREGATE_FILE: &str = "sim_aggregate.csv";

/// Reads a TOML sweep config and writes tidy and aggregate CSVs.
pub fn cmd_sim(config_path: &Path, out_dir: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(config_path)?;
    let config = SimConfig::from_toml(&text)?;
    cmd_sim_config(&config, out_dir)
}

pub fn cmd_sim_config(config: &SimConfig, out_dir: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    let result = run_experiment(config)?;
    ensure_dir(out_dir)?;
    let tidy = out_dir.join(TIDY_FILE);
    let agg = out_dir.join(AGGREGATE_FILE);
    let mut buf = Vec::new();
    result.write_tidy_csv(&mut buf)?;
    write_atomic(&tidy, &buf)?;
    buf.clear();
    result.write_aggregate_csv(&mut buf)?;
    write_atomic(&agg, &buf)?;
    let value = serde_json::json!({ "n": result.n, "config": config });
    finish(out_dir, "sim", value, Some(config.master_seed), vec![tidy, agg], start)
}

/// Numeric table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

impl Table {
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if names.is_empty() {
            return Err(Error::data("CSV has no columns"));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != names.len() {
                return Err(Error::data(format!("row {}: expected {} fields, got {}", r + 1, names.len(), rec.len())));
            }
            for (c, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::data(format!("row {}, column '{}': '{field}' is not numeric", r + 1, names[c]))
                })?;
                if !v.is_finite() {
                    return Err(Error::data(format!("row {}, column '{}': non-finite value", r + 1, names[c])));
                }
                data.push(v);
            }
            rows += 1;
        }
        Ok(Self { values: DMatrix::from_row_slice(rows, names.len(), &data), names })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record(&self.names)?;
        for row in self.values.row_iter() {
            w.write_record(row.iter().map(f64::to_string))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Splits off `target` as the response; the other columns are features.
    pub fn into_dataset(self, target: &str) -> Result<(Dataset, Vec<String>)> {
        let t = self
            .names
            .iter()
            .position(|n| n == target)
            .ok_or_else(|| Error::data(format!("target column '{target}' not found")))?;
        let features: Vec<String> =
            self.names.iter().enumerate().filter(|&(i, _)| i != t).map(|(_, n)| n.clone()).collect();
        let y = self.values.column(t).clone_owned();
        let x = self.values.remove_column(t);
        Ok((Dataset::new(x, y)?, features))
    }

    pub fn from_dataset(data: &Dataset, feature_names: &[String], target: &str) -> Result<Self> {
        if feature_names.len() != data.p() {
            return Err(Error::param("one name per feature column is required"));
        }
        let mut names = feature_names.to_vec();
        names.push(target.to_string());
        let values = data.x().clone().insert_column(data.p(), 0.0);
        let mut values = values;
        values.set_column(data.p(), data.y());
        Ok(Self { names, values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneArgs {
    pub target: String,
    pub lambda: f64,
    pub m: usize,
    pub nu: f64,
    pub seed: u64,
    pub holdout: f64,
    /// Also tune a full-data ridge baseline over a log grid of penalties.
    pub baseline: bool,
    /// Positive penalty for the `λ̂` extrapolation; `None` skips it.
    pub extrapolate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub n_train: usize,
    pub n_holdout: usize,
    pub p: usize,
    pub target: String,
    pub features: Vec<String>,
    /// Training-split mean removed from the target before fitting.
    pub target_mean: f64,
    pub tune: TuneResult,
    pub holdout_mse: f64,
    pub baseline_holdout_mse: Option<f64>,
}

struct Standardizer {
    mean: DVector<f64>,
    scale: DVector<f64>,
}

impl Standardizer {
    fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mean = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n));
        let scale = DVector::from_iterator(
            x.ncols(),
            x.column_iter().zip(mean.iter()).map(|(c, &m)| {
                let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            }),
        );
        Self { mean, scale }
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.scale[j])
    }
}

fn holdout_mse(pred: &DVector<f64>, offset: f64, truth: &DVector<f64>) -> f64 {
    pred.iter().zip(truth.iter()).map(|(p, t)| (p + offset - t).powi(2)).sum::<f64>() / truth.len() as f64
}

/// GCV subsample tuning on a CSV file with a seeded train/holdout split.
pub fn cmd_tune(data_path: &Path, args: &TuneArgs, out_dir: &Path) -> Result<(RunManifest, TuneReport)> {
    let start = Instant::now();
    let table = Table::read_csv(fs::File::open(data_path)?)?;
    let (report, tune_json_extra) = tune_table(table, args)?;
    ensure_dir(out_dir)?;
    let json_path = out_dir.join("tune.json");
    write_atomic(&json_path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    let path_csv = out_dir.join("tune_path.csv");
    let mut buf = Vec::new();
    report.tune.write_path_csv(&mut buf)?;
    write_atomic(&path_csv, &buf)?;
    let config = serde_json::json!({ "data": data_path, "args": args, "baseline_lambda": tune_json_extra });
    let manifest = finish(out_dir, "tune", config, Some(args.seed), vec![json_path, path_csv], start)?;
    Ok((manifest, report))
}

/// The in-memory part of [`cmd_tune`]. Also returns the baseline penalty.
pub fn tune_table(table: Table, args: &TuneArgs) -> Result<(TuneReport, Option<f64>)> {
    if !(args.holdout > 0.0 && args.holdout < 1.0) {
        return Err(Error::param(format!("holdout fraction {} outside (0, 1)", args.holdout)));
    }
    if args.m == 0 {
        return Err(Error::param("ensemble size must be at least 1"));
    }
    let (data, features) = table.into_dataset(&args.target)?;
    let n = data.n();
    if n < 4 {
        return Err(Error::data(format!("need at least 4 rows, got {n}")));
    }
    let n_hold = ((n as f64 * args.holdout).round() as usize).clamp(1, n - 2);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(args.seed));
    let (hold_idx, train_idx) = order.split_at(n_hold);
    let mut train_idx = train_idx.to_vec();
    let mut hold_idx = hold_idx.to_vec();
    train_idx.sort_unstable();
    hold_idx.sort_unstable();
    let train_raw = data.select(&train_idx)?;
    let hold_raw = data.select(&hold_idx)?;

    let scaler = Standardizer::fit(train_raw.x());
    let target_mean = train_raw.y().mean();
    let train = Dataset::new(scaler.apply(train_raw.x()), train_raw.y().add_scalar(-target_mean))?;
    let hold_x = scaler.apply(hold_raw.x());

    let grid = subsample_grid(train.n(), args.nu)?;
    let mut result = tune_k(&train, args.lambda, &grid, args.m, args.seed)?;
    let fit = ensemble_fit(&train, result.k_hat, args.m, args.lambda, cell_seed(args.seed, result.k_hat))?;
    let mse = holdout_mse(&predict(&fit, &hold_x)?, target_mean, hold_raw.y());

    let mut baseline_lambda = None;
    let mut baseline_mse = None;
    if args.baseline {
        let choice = tune_lambda(&train, &default_lambda_grid(1e-6, 1e4, 101))?;
        let beta = RidgePath::new(&train).coefficients(choice.lambda);
        baseline_mse = Some(holdout_mse(&(&hold_x * beta), target_mean, hold_raw.y()));
        baseline_lambda = Some(choice.lambda);
        result.baseline = Some(choice);
    }
    if let Some(lambda) = args.extrapolate {
        let at_lambda = tune_k(&train, lambda, &grid, args.m, args.seed)?;
        let at_zero =
            if args.lambda == 0.0 { result.k_hat } else { tune_k(&train, 0.0, &grid, args.m, args.seed)?.k_hat };
        result.lambda_hat = lambda_hat(at_zero, at_lambda.k_hat, lambda, train.n()).ok();
    }
    let report = TuneReport {
        n_train: train.n(),
        n_holdout: hold_idx.len(),
        p: train.p(),
        target: args.target.clone(),
        features,
        target_mean,
        tune: result,
        holdout_mse: mse,
        baseline_holdout_mse: baseline_mse,
    };
    Ok((report, baseline_lambda))
}
