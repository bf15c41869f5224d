//! Subsample-size selection by GCV, the full-data ridge baseline tuned by
//! GCV over `λ`, and the extrapolated penalty estimate `λ̂`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::ensemble::{ensemble_fit, gcv, Dataset, EnsembleFit, RidgePath};
use crate::error::{Error, Result};
use crate::montecarlo::derive_seed;

pub const DEFAULT_NU: f64 = 0.5;

/// `{0, k0, 2k0, ..., ⌊n/k0⌋k0} ∪ {n}` with `k0 = ⌊n^ν⌋`.
pub fn subsample_grid(n: usize, nu: f64) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::param(format!("n = {n} is too small for a subsample grid")));
    }
    if !(nu > 0.0 && nu < 1.0) {
        return Err(Error::param(format!("nu = {nu} outside (0, 1)")));
    }
    // Guard against n^ν landing just below an integer.
    let k0 = ((n as f64).powf(nu) * (1.0 + 1e-12)).floor().max(1.0) as usize;
    let mut grid: Vec<usize> = (0..=n / k0).map(|j| j * k0).collect();
    if *grid.last().expect("non-empty") != n {
        grid.push(n);
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunePathPoint {
    pub k: usize,
    /// `+inf` for degenerate cells.
    pub gcv: f64,
    pub degenerate: bool,
    /// Set for the ridgeless `k = p` cell, where the denominator degenerates.
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaChoice {
    pub lambda: f64,
    pub gcv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub lambda: f64,
    pub m: usize,
    pub k_hat: usize,
    pub gcv_at_k_hat: f64,
    pub path: Vec<TunePathPoint>,
    pub lambda_hat: Option<f64>,
    pub baseline: Option<LambdaChoice>,
}

impl TuneResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Columns `k,gcv,degenerate,flagged`.
    pub fn write_path_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        for pt in &self.path {
            w.serialize(pt)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Seed used for the ensemble at subsample size `k`. It depends on `k` only,
/// so adding grid points leaves existing cells unchanged.
pub fn cell_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, &[k as u64])
}

/// Fits an `M`-ensemble for every `k` in `grid` (`k = 0` is the null
/// predictor) and picks the smallest `k` with minimal GCV.
pub fn tune_k(data: &Dataset, lambda: f64, grid: &[usize], m: usize, seed: u64) -> Result<TuneResult> {
    Ok(tune_k_scored(data, lambda, grid, m, seed, |_| Ok(0.0))?.0)
}

/// [`tune_k`] that also evaluates `score` on each fitted ensemble, returned
/// in ascending-`k` order (for example, its risk on held-out data).
pub fn tune_k_scored<F>(
    data: &Dataset,
    lambda: f64,
    grid: &[usize],
    m: usize,
    seed: u64,
    score: F,
) -> Result<(TuneResult, Vec<f64>)>
where
    F: Fn(&EnsembleFit) -> Result<f64> + Sync,
{
    let mut ks = grid.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(Error::param("subsample grid is empty"));
    }
    if let Some(&k) = ks.iter().find(|&&k| k > data.n()) {
        return Err(Error::param(format!("grid value {k} exceeds n = {}", data.n())));
    }
    let eval = |&k: &usize| -> Result<(TunePathPoint, f64)> {
        let fit = ensemble_fit(data, k, m, lambda, cell_seed(seed, k))?;
        let report = gcv(&fit, data)?;
        let pt = TunePathPoint {
            k,
            gcv: report.gcv,
            degenerate: report.degenerate,
            flagged: lambda == 0.0 && k == data.p(),
        };
        Ok((pt, score(&fit)?))
    };
    #[cfg(feature = "parallel")]
    let cells: Vec<(TunePathPoint, f64)> = {
        use rayon::prelude::*;
        ks.par_iter().map(eval).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let cells: Vec<(TunePathPoint, f64)> = ks.iter().map(eval).collect::<Result<_>>()?;
    let (path, scores): (Vec<TunePathPoint>, Vec<f64>) = cells.into_iter().unzip();

    let best = path.iter().fold(path[0], |best, pt| if pt.gcv < best.gcv { *pt } else { best });
    let result =
        TuneResult { lambda, m, k_hat: best.k, gcv_at_k_hat: best.gcv, path, lambda_hat: None, baseline: None };
    Ok((result, scores))
}

/// `λ̂ = λ (n - k̂⁰) / (k̂^λ - k̂⁰)`: the penalty at which the line through
/// `(0, k̂⁰)` and `(λ, k̂^λ)` reaches `k = n`.
pub fn lambda_hat(k_hat_0: usize, k_hat_lambda: usize, lambda: f64, n: usize) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param(format!("lambda = {lambda} must be positive")));
    }
    if k_hat_lambda <= k_hat_0 {
        return Err(Error::ExtrapolationUndefined { k_zero: k_hat_0, k_lambda: k_hat_lambda });
    }
    Ok(lambda * (n as f64 - k_hat_0 as f64) / (k_hat_lambda - k_hat_0) as f64)
}

/// Extrapolation along the risk equivalence contour, which is a straight
/// line in `(λ, p/k)` rather than in `(λ, k)`:
/// `λ̂ = λ (1/k̂⁰ - 1/n) / (1/k̂⁰ - 1/k̂^λ)`.
pub fn lambda_hat_contour(k_hat_0: usize, k_hat_lambda: usize, lambda: f64, n: usize) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param(format!("lambda = {lambda} must be positive")));
    }
    if k_hat_lambda <= k_hat_0 || k_hat_0 == 0 {
        return Err(Error::ExtrapolationUndefined { k_zero: k_hat_0, k_lambda: k_hat_lambda });
    }
    let inv = |k: usize| 1.0 / k as f64;
    Ok(lambda * (inv(k_hat_0) - inv(n)) / (inv(k_hat_0) - inv(k_hat_lambda)))
}

/// Full-data ridge (`k = n`, `M = 1`) tuned by GCV over `lambdas`, from one
/// SVD. Ties go to the smallest penalty.
pub fn tune_lambda(data: &Dataset, lambdas: &[f64]) -> Result<LambdaChoice> {
    if lambdas.is_empty() || lambdas.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
        return Err(Error::param("lambda grid must be non-empty and nonnegative"));
    }
    let path = RidgePath::new(data);
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = LambdaChoice { lambda: sorted[0], gcv: path.point(sorted[0]).gcv };
    for &lambda in &sorted[1..] {
        let g = path.point(lambda).gcv;
        if g < best.gcv {
            best = LambdaChoice { lambda, gcv: g };
        }
    }
    Ok(best)
}

/// Log-spaced penalties `lo .. hi` plus zero.
pub fn default_lambda_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let mut out = vec![0.0];
    let (a, b) = (lo.ln(), hi.ln());
    let steps = count.max(2) - 1;
    out.extend((0..=steps).map(|i| (a + (b - a) * i as f64 / steps as f64).exp()));
    out
}

/// Runs [`tune_k`] at penalties 0 and `lambda` and extrapolates `λ̂`. The
/// returned result is the `λ = 0` selection with `lambda_hat` filled in
/// when the extrapolation is defined.
pub fn tune_with_extrapolation(
    data: &Dataset,
    lambda: f64,
    grid: &[usize],
    m: usize,
    seed: u64,
) -> Result<(TuneResult, TuneResult)> {
    let mut at_zero = tune_k(data, 0.0, grid, m, seed)?;
    let at_lambda = tune_k(data, lambda, grid, m, seed)?;
    at_zero.lambda_hat = lambda_hat(at_zero.k_hat, at_lambda.k_hat, lambda, data.n()).ok();
    Ok((at_zero, at_lambda))
}
