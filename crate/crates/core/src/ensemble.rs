//! Subsample ridge ensembles fitted to data, with training, out-of-bag and
//! GCV error estimates.
//!
//! Members are fitted through the Gram matrix on the smaller side of the
//! subsample design (`XᵀX/k` when `k >= p`, `XXᵀ/k` otherwise) and a
//! Cholesky factorization; rank-deficient ridgeless members fall back to an
//! eigendecomposition with a relative cutoff. [`ridge_fit`] and
//! [`RidgePath`] use the SVD of the design instead.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, SVD};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::Population;

/// Denominators below this are reported as degenerate.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::data(format!("design is {n}x{p}, need at least one row and column")));
        }
        if y.len() != n {
            return Err(Error::data(format!("design has {n} rows but response has {} entries", y.len())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite entry in data"));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        if rows.iter().any(|&i| i >= self.n()) {
            return Err(Error::param("row index out of range"));
        }
        Self::new(self.x.select_rows(rows), DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i])))
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DVector<f64>) {
        (self.x, self.y)
    }
}

/// Strictly increasing row indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubsampleIndex(Vec<usize>);

impl SubsampleIndex {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("subsample indices must be strictly increasing"));
        }
        Ok(Self(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub subset: SubsampleIndex,
    pub coefficients: DVector<f64>,
    /// `tr(M Σ̂)` for this member: its effective degrees of freedom.
    pub trace_contribution: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleFit {
    lambda: f64,
    k: usize,
    n: usize,
    members: Vec<Member>,
    averaged: DVector<f64>,
    union: SubsampleIndex,
}

impl EnsembleFit {
    fn assemble(lambda: f64, k: usize, n: usize, p: usize, members: Vec<Member>) -> Self {
        let mut averaged = DVector::zeros(p);
        for m in &members {
            averaged += &m.coefficients;
        }
        if !members.is_empty() {
            averaged /= members.len() as f64;
        }
        let mut seen = vec![false; n];
        for m in &members {
            for &i in m.subset.indices() {
                seen[i] = true;
            }
        }
        let union = SubsampleIndex((0..n).filter(|&i| seen[i]).collect());
        Self { lambda, k, n, members, averaged, union }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ensemble_size(&self) -> usize {
        self.members.len()
    }

    pub fn is_null(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn averaged_coefficients(&self) -> &DVector<f64> {
        &self.averaged
    }

    /// Rows used by at least one member; empty for the null fit.
    pub fn union_indices(&self) -> &SubsampleIndex {
        &self.union
    }

    /// `(1/M) Σ tr(M_ℓ Σ̂_ℓ)`, which equals the trace of the smoothing matrix.
    pub fn mean_trace(&self) -> f64 {
        if self.members.is_empty() {
            return 0.0;
        }
        self.members.iter().map(|m| m.trace_contribution).sum::<f64>() / self.members.len() as f64
    }

    /// The ensemble made of the first `m` members. Because member `ℓ`
    /// depends only on `(seed, ℓ)`, this equals a fresh `m`-member fit.
    pub fn prefix(&self, m: usize) -> Result<Self> {
        if self.is_null() {
            return Ok(self.clone());
        }
        if m == 0 || m > self.members.len() {
            return Err(Error::param(format!("prefix size {m} outside 1..={}", self.members.len())));
        }
        Ok(Self::assemble(self.lambda, self.k, self.n, self.averaged.len(), self.members[..m].to_vec()))
    }
}

/// Ridge (`λ > 0`) or minimum-norm least squares (`λ = 0`) coefficients
/// for `(XᵀX/k + λI) β = Xᵀy/k`, computed from the SVD of `X`.
pub fn ridge_fit(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    check_fit_input(x, y, lambda)?;
    let (k, p) = x.shape();
    let svd = SVD::new(x.clone(), true, true);
    let (u, vt) = (svd.u.as_ref().expect("u requested"), svd.v_t.as_ref().expect("v_t requested"));
    let kf = k as f64;
    let cutoff = svd_cutoff(&svd.singular_values, k, p);
    let uty = u.tr_mul(y);
    let mut w = DVector::zeros(svd.singular_values.len());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff || lambda > 0.0 {
            w[i] = s / kf / (s * s / kf + lambda) * uty[i];
        }
    }
    Ok(vt.tr_mul(&w))
}

fn check_fit_input(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param(format!("lambda = {lambda} must be finite and nonnegative")));
    }
    if x.nrows() != y.len() {
        return Err(Error::data("design and response lengths differ"));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite entry in data"));
    }
    Ok(())
}

fn svd_cutoff(s: &DVector<f64>, k: usize, p: usize) -> f64 {
    k.max(p) as f64 * f64::EPSILON * s.max()
}

/// One member: coefficients and `tr((Σ̂ + λI)⁻¹ Σ̂)`.
fn fit_member(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> (DVector<f64>, f64) {
    let (k, p) = x.shape();
    let kf = k as f64;
    let xt = x.transpose();
    let primal = k >= p;
    // Gram on the smaller side; both sides share nonzero eigenvalues.
    let mut gram = if primal { &xt * x } else { x * &xt };
    gram /= kf;
    let dim = gram.nrows();
    let scale = (0..dim).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    let rhs = if primal { &xt * y / kf } else { y / kf };

    let mut shifted = gram.clone();
    for i in 0..dim {
        shifted[(i, i)] += lambda;
    }
    let chol = Cholesky::new(shifted).filter(|c| {
        let l = c.l_dirty();
        let min_pivot = (0..dim).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        lambda > 0.0 || min_pivot > k.max(p) as f64 * f64::EPSILON * scale
    });
    let (solved, trace) = match chol {
        Some(c) => {
            let solved = c.solve(&rhs);
            let trace = if lambda > 0.0 {
                let inv_l = c.l().solve_lower_triangular(&DMatrix::identity(dim, dim)).expect("nonsingular factor");
                dim as f64 - lambda * inv_l.norm_squared()
            } else {
                dim as f64
            };
            (solved, trace)
        }
        None => {
            let eig = SymmetricEigen::new(gram);
            let cutoff = k.max(p) as f64 * f64::EPSILON * eig.eigenvalues.max().max(0.0);
            let q = &eig.eigenvectors;
            let mut coef = q.tr_mul(&rhs);
            let mut trace = 0.0;
            for (i, &d) in eig.eigenvalues.iter().enumerate() {
                if d > cutoff {
                    coef[i] /= d + lambda;
                    trace += d / (d + lambda);
                } else {
                    coef[i] = 0.0;
                }
            }
            (q * coef, trace)
        }
    };
    let beta = if primal { solved } else { &xt * solved };
    (beta, trace)
}

/// `m` independent uniform size-`k` subsets of `0..n`. Member `ℓ` draws from
/// a ChaCha8 stream keyed by `(seed, ℓ)`, so any prefix of the list is what
/// a smaller `m` would give.
pub fn sample_subsets(n: usize, k: usize, m: usize, seed: u64) -> Result<Vec<SubsampleIndex>> {
    if k == 0 || k > n {
        return Err(Error::param(format!("subsample size {k} outside 1..={n}")));
    }
    if m == 0 {
        return Err(Error::param("ensemble size must be at least 1"));
    }
    Ok((0..m).map(|l| sample_subset(n, k, seed, l)).collect())
}

fn sample_subset(n: usize, k: usize, seed: u64, member: usize) -> SubsampleIndex {
    if k == n {
        return SubsampleIndex((0..n).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(member as u64);
    let mut idx = index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    SubsampleIndex(idx)
}

/// Fits `m` ridge members on random size-`k` subsets. `k = 0` gives the null
/// predictor (zero coefficients, empty union).
pub fn ensemble_fit(data: &Dataset, k: usize, m: usize, lambda: f64, seed: u64) -> Result<EnsembleFit> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param(format!("lambda = {lambda} must be finite and nonnegative")));
    }
    if m == 0 {
        return Err(Error::param("ensemble size must be at least 1"));
    }
    if k == 0 {
        return Ok(EnsembleFit::assemble(lambda, 0, data.n(), data.p(), Vec::new()));
    }
    let subsets = sample_subsets(data.n(), k, m, seed)?;

    // Identical subsets (always the case at k = n) are fitted once.
    let mut first: HashMap<&SubsampleIndex, usize> = HashMap::new();
    let mut unique = Vec::new();
    let slot: Vec<usize> = subsets
        .iter()
        .map(|s| {
            *first.entry(s).or_insert_with(|| {
                unique.push(s);
                unique.len() - 1
            })
        })
        .collect();

    let fit_one = |s: &&SubsampleIndex| {
        let x = data.x.select_rows(s.indices());
        let y = DVector::from_iterator(s.len(), s.indices().iter().map(|&i| data.y[i]));
        fit_member(&x, &y, lambda)
    };
    #[cfg(feature = "parallel")]
    let fitted: Vec<(DVector<f64>, f64)> = {
        use rayon::prelude::*;
        unique.par_iter().map(fit_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let fitted: Vec<(DVector<f64>, f64)> = unique.iter().map(fit_one).collect();

    let members = subsets
        .iter()
        .zip(&slot)
        .map(|(s, &j)| Member { subset: s.clone(), coefficients: fitted[j].0.clone(), trace_contribution: fitted[j].1 })
        .collect();
    Ok(EnsembleFit::assemble(lambda, k, data.n(), data.p(), members))
}

pub fn predict(fit: &EnsembleFit, x_new: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x_new.ncols() != fit.averaged.len() {
        return Err(Error::data(format!("expected {} columns, got {}", fit.averaged.len(), x_new.ncols())));
    }
    Ok(x_new * &fit.averaged)
}

fn squared_residuals(fit: &EnsembleFit, data: &Dataset) -> Result<Vec<f64>> {
    if data.n() != fit.n {
        return Err(Error::data(format!("fit was built on {} rows, data has {}", fit.n, data.n())));
    }
    let pred = predict(fit, &data.x)?;
    Ok((0..data.n()).map(|i| (data.y[i] - pred[i]).powi(2)).collect())
}

fn mean_over(values: &[f64], rows: impl ExactSizeIterator<Item = usize>) -> f64 {
    let len = rows.len();
    rows.map(|i| values[i]).sum::<f64>() / len as f64
}

/// Mean squared residual over the union of the subsamples (all rows for the
/// null fit).
pub fn training_error(fit: &EnsembleFit, data: &Dataset) -> Result<f64> {
    let r = squared_residuals(fit, data)?;
    Ok(train_from(fit, &r))
}

fn train_from(fit: &EnsembleFit, r: &[f64]) -> f64 {
    if fit.is_null() {
        mean_over(r, 0..r.len())
    } else {
        mean_over(r, fit.union.indices().iter().copied())
    }
}

fn oob_from(fit: &EnsembleFit, r: &[f64]) -> Option<f64> {
    if fit.is_null() {
        return Some(mean_over(r, 0..r.len()));
    }
    let outside: Vec<usize> = (0..r.len()).filter(|&i| !fit.union.contains(i)).collect();
    if outside.is_empty() {
        None
    } else {
        Some(mean_over(r, outside.into_iter()))
    }
}

/// Mean squared residual over rows no member has seen.
pub fn oob_error(fit: &EnsembleFit, data: &Dataset) -> Result<f64> {
    let r = squared_residuals(fit, data)?;
    oob_from(fit, &r).ok_or(Error::UndefinedOob)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcvReport {
    pub train_error: f64,
    /// `tr(S)`, the mean member trace.
    pub trace: f64,
    pub union_size: usize,
    pub denominator: f64,
    /// `train_error / denominator`; `+inf` when the denominator is degenerate.
    pub gcv: f64,
    pub oob_error: Option<f64>,
    pub degenerate: bool,
}

pub fn gcv(fit: &EnsembleFit, data: &Dataset) -> Result<GcvReport> {
    let r = squared_residuals(fit, data)?;
    let train_error = train_from(fit, &r);
    let oob_error = oob_from(fit, &r);
    if fit.is_null() {
        return Ok(GcvReport {
            train_error,
            trace: 0.0,
            union_size: 0,
            denominator: 1.0,
            gcv: train_error,
            oob_error,
            degenerate: false,
        });
    }
    let trace = fit.mean_trace();
    let union_size = fit.union.len();
    let base = 1.0 - trace / union_size as f64;
    let denominator = base * base;
    let degenerate = denominator < DEGENERATE_DENOMINATOR;
    let gcv = if degenerate { f64::INFINITY } else { train_error / denominator };
    Ok(GcvReport { train_error, trace, union_size, denominator, gcv, oob_error, degenerate })
}

/// Mean squared prediction error on held-out pairs: a Monte Carlo estimate
/// of the conditional risk.
pub fn conditional_risk(fit: &EnsembleFit, test: &Dataset) -> Result<f64> {
    let pred = predict(fit, &test.x)?;
    Ok((&test.y - pred).norm_squared() / test.n() as f64)
}

/// Exact conditional risk `σ² + (β̃ - β0)ᵀ Σ (β̃ - β0)` under a population.
pub fn population_risk(fit: &EnsembleFit, population: &Population) -> Result<f64> {
    if population.dim() != fit.averaged.len() {
        return Err(Error::data("population dimension does not match the fit"));
    }
    let diff = &fit.averaged - &population.beta0;
    Ok(population.model.sigma2 + diff.dot(&(&population.covariance * &diff)))
}

/// GCV with a finite-ensemble correction. Flagged experimental.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectedGcv {
    pub value: f64,
    pub a1: f64,
    pub a2: f64,
    /// Set when the correction was unavailable and plain GCV was returned.
    pub fallback: bool,
}

/// Corrected GCV `(a1 T + a2 R̄) / D` for an `M`-ensemble, where `T`, `R̄`
/// and `D` are its training error, out-of-bag error and GCV denominator.
/// With `a1 = 1`, `a2 = D - T / R̂_M` makes the estimate unbiased for `R_M`,
/// where `R̂_M = -(1 - 2/M) R̂_1 + 2 (1 - 1/M) R̂_2` uses the out-of-bag
/// errors of the one- and two-member fits `aux1`, `aux2`. As `M` grows,
/// `T → D R_M` and the weights tend to `(1, 0)`.
pub fn corrected_gcv_with(
    fit: &EnsembleFit,
    data: &Dataset,
    aux1: &EnsembleFit,
    aux2: &EnsembleFit,
) -> Result<CorrectedGcv> {
    let report = gcv(fit, data)?;
    let plain = CorrectedGcv { value: report.gcv, a1: 1.0, a2: 0.0, fallback: true };
    let m = fit.ensemble_size();
    if m < 2 || report.degenerate {
        return Ok(plain);
    }
    let (Some(oob), Ok(r1), Ok(r2)) = (report.oob_error, oob_error(aux1, data), oob_error(aux2, data)) else {
        return Ok(plain);
    };
    let mf = m as f64;
    let r_m = -(1.0 - 2.0 / mf) * r1 + 2.0 * (1.0 - 1.0 / mf) * r2;
    if !(r_m > 0.0) {
        return Ok(plain);
    }
    let a2 = report.denominator - report.train_error / r_m;
    let value = (report.train_error + a2 * oob) / report.denominator;
    if !(value.is_finite() && value > 0.0) {
        return Ok(plain);
    }
    Ok(CorrectedGcv { value, a1: 1.0, a2, fallback: false })
}

/// [`corrected_gcv_with`] using the fit's own first one and two members as
/// the auxiliary fits.
pub fn corrected_gcv(fit: &EnsembleFit, data: &Dataset) -> Result<CorrectedGcv> {
    if fit.ensemble_size() < 2 {
        let report = gcv(fit, data)?;
        return Ok(CorrectedGcv { value: report.gcv, a1: 1.0, a2: 0.0, fallback: true });
    }
    corrected_gcv_with(fit, data, &fit.prefix(1)?, &fit.prefix(2)?)
}

/// Serializable summary of one fit and its error estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub lambda: f64,
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub trace: f64,
    pub union_size: usize,
    pub train_error: f64,
    pub denominator: f64,
    pub gcv: f64,
    pub oob_error: Option<f64>,
}

impl EnsembleSummary {
    pub fn new(fit: &EnsembleFit, data: &Dataset) -> Result<Self> {
        let r = gcv(fit, data)?;
        Ok(Self {
            lambda: fit.lambda,
            k: fit.k,
            m: fit.ensemble_size(),
            n: fit.n,
            p: fit.averaged.len(),
            trace: r.trace,
            union_size: r.union_size,
            train_error: r.train_error,
            denominator: r.denominator,
            gcv: r.gcv,
            oob_error: r.oob_error,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Averaged coefficients as a one-column CSV with header `coefficient`.
pub fn write_coefficients_csv<W: Write>(fit: &EnsembleFit, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(["coefficient"])?;
    for b in fit.averaged.iter() {
        w.write_record([b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Full-data ridge fits along a penalty path from a single SVD of `X/√n`.
#[derive(Debug, Clone)]
pub struct RidgePath {
    n: usize,
    singular_values: DVector<f64>,
    v_t: DMatrix<f64>,
    /// `Uᵀy`.
    uty: DVector<f64>,
    y_norm2: f64,
    cutoff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub train_error: f64,
    pub trace: f64,
    pub denominator: f64,
    pub gcv: f64,
}

impl RidgePath {
    pub fn new(data: &Dataset) -> Self {
        let (n, p) = (data.n(), data.p());
        let svd = SVD::new(data.x.clone(), true, true);
        let cutoff = svd_cutoff(&svd.singular_values, n, p);
        let u = svd.u.expect("u requested");
        Self {
            n,
            uty: u.tr_mul(&data.y),
            v_t: svd.v_t.expect("v_t requested"),
            y_norm2: data.y.norm_squared(),
            singular_values: svd.singular_values,
            cutoff,
        }
    }

    /// Weight of each singular direction: `s² / (s² + nλ)`, or 1/0 at `λ = 0`.
    fn shrink(&self, lambda: f64) -> impl Iterator<Item = f64> + '_ {
        let nf = self.n as f64;
        self.singular_values.iter().map(move |&s| {
            if s > self.cutoff || lambda > 0.0 {
                s * s / (s * s + nf * lambda)
            } else {
                0.0
            }
        })
    }

    pub fn coefficients(&self, lambda: f64) -> DVector<f64> {
        let w = DVector::from_iterator(
            self.uty.len(),
            self.shrink(lambda).zip(self.singular_values.iter()).zip(self.uty.iter()).map(|((h, &s), &c)| {
                if h > 0.0 {
                    h / s * c
                } else {
                    0.0
                }
            }),
        );
        self.v_t.tr_mul(&w)
    }

    pub fn point(&self, lambda: f64) -> PathPoint {
        let nf = self.n as f64;
        let mut trace = 0.0;
        let mut fitted_resid = 0.0;
        let mut explained = 0.0;
        for (h, &c) in self.shrink(lambda).zip(self.uty.iter()) {
            trace += h;
            fitted_resid += (1.0 - h) * (1.0 - h) * c * c;
            explained += c * c;
        }
        let rss = (self.y_norm2 - explained).max(0.0) + fitted_resid;
        let train_error = rss / nf;
        let base = 1.0 - trace / nf;
        let denominator = base * base;
        let gcv = if denominator < DEGENERATE_DENOMINATOR { f64::INFINITY } else { train_error / denominator };
        PathPoint { lambda, train_error, trace, denominator, gcv }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_data(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn ridge_fit_examples() {
        let x = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let b = ridge_fit(&x, &y, 0.0).unwrap();
        assert_relative_eq!(b, y, epsilon = 1e-14);
        let b = ridge_fit(&x, &y, 0.5).unwrap();
        assert_relative_eq!(b, DVector::from_vec(vec![0.5, 1.0]), epsilon = 1e-14);
        let b = ridge_fit(&x, &y, 1e9).unwrap();
        assert!(b.norm() <= 1e-8);
        let bad = DMatrix::from_element(2, 2, f64::NAN);
        assert!(matches!(ridge_fit(&bad, &y, 0.1), Err(Error::InvalidData(_))));
    }

    #[test]
    fn ridge_fit_normal_equations() {
        for (n, p) in [(30, 10), (10, 30)] {
            let d = random_data(n, p, 3);
            let nf = n as f64;
            for lambda in [0.0, 0.2] {
                let b = ridge_fit(d.x(), d.y(), lambda).unwrap();
                let lhs = (d.x().tr_mul(d.x()) / nf + DMatrix::identity(p, p) * lambda) * &b;
                let rhs = d.x().tr_mul(d.y()) / nf;
                assert!((lhs - &rhs).norm() <= 1e-8 * rhs.norm().max(1.0));
                let (fast, _) = fit_member(d.x(), d.y(), lambda);
                assert_relative_eq!(fast, b, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn rank_deficient_member_uses_pseudo_inverse() {
        let mut d = random_data(20, 6, 5).into_parts();
        let c0 = d.0.column(0).clone_owned();
        d.0.set_column(1, &c0);
        let (fast, trace) = fit_member(&d.0, &d.1, 0.0);
        let svd = ridge_fit(&d.0, &d.1, 0.0).unwrap();
        assert_relative_eq!(fast, svd, epsilon = 1e-8);
        assert_relative_eq!(trace, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn ridge_fit_is_lipschitz_in_lambda() {
        let d = random_data(40, 8, 9);
        let a = ridge_fit(d.x(), d.y(), 0.3).unwrap();
        let b = ridge_fit(d.x(), d.y(), 0.3 + 1e-7).unwrap();
        assert!((a - b).norm() <= 100.0 * 1e-7);
    }

    #[test]
    fn subsets() {
        let s = sample_subsets(5, 5, 3, 1).unwrap();
        assert!(s.iter().all(|x| x.indices() == [0, 1, 2, 3, 4]));
        assert!(sample_subsets(5, 6, 1, 1).is_err());

        let s = sample_subsets(2, 1, 10_000, 42).unwrap();
        let zeros = s.iter().filter(|x| x.indices() == [0]).count() as f64 / 1e4;
        assert!((0.48..=0.52).contains(&zeros), "{zeros}");

        let a = sample_subsets(50, 10, 7, 99).unwrap();
        assert_eq!(a, sample_subsets(50, 10, 7, 99).unwrap());
        assert_eq!(a[..3], sample_subsets(50, 10, 3, 99).unwrap()[..]);
        assert_ne!(a, sample_subsets(50, 10, 7, 100).unwrap());
        for s in &a {
            assert_eq!(s.len(), 10);
            assert!(s.indices().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn fit_basics() {
        let d = random_data(40, 10, 1);
        let f = ensemble_fit(&d, 40, 1, 0.1, 7).unwrap();
        assert_eq!(f.union_indices().len(), 40);
        assert_relative_eq!(*f.averaged_coefficients(), ridge_fit(d.x(), d.y(), 0.1).unwrap(), epsilon = 1e-10);

        let f = ensemble_fit(&d, 20, 8, 0.3, 7).unwrap();
        let mut mean = DVector::zeros(10);
        for m in f.members() {
            let sub = d.select(m.subset.indices()).unwrap();
            let b = ridge_fit(sub.x(), sub.y(), 0.3).unwrap();
            assert_relative_eq!(m.coefficients, b, epsilon = 1e-10);
            mean += b / 8.0;
        }
        assert_relative_eq!(*f.averaged_coefficients(), mean, epsilon = 1e-12);

        let d = random_data(40, 30, 2);
        let f = ensemble_fit(&d, 20, 5, 0.0, 3).unwrap();
        for m in f.members() {
            assert_relative_eq!(m.trace_contribution, 20.0, epsilon = 1e-12);
        }
        let f = ensemble_fit(&d, 20, 5, 0.4, 3).unwrap();
        for m in f.members() {
            assert!(m.trace_contribution > 0.0 && m.trace_contribution < 20.0);
        }
    }

    #[test]
    fn prefix_matches_smaller_fit() {
        let d = random_data(40, 10, 4);
        let big = ensemble_fit(&d, 15, 9, 0.2, 11).unwrap();
        let small = ensemble_fit(&d, 15, 4, 0.2, 11).unwrap();
        assert_eq!(big.prefix(4).unwrap(), small);
        assert!(big.prefix(10).is_err());
    }

    #[test]
    fn null_fit() {
        let d = random_data(30, 5, 6);
        let f = ensemble_fit(&d, 0, 3, 0.0, 1).unwrap();
        assert!(f.is_null());
        let ms = d.y().norm_squared() / 30.0;
        assert_relative_eq!(training_error(&f, &d).unwrap(), ms, epsilon = 1e-14);
        assert_relative_eq!(oob_error(&f, &d).unwrap(), ms, epsilon = 1e-14);
        let g = gcv(&f, &d).unwrap();
        assert_eq!(g.denominator, 1.0);
        assert_relative_eq!(g.gcv, ms, epsilon = 1e-14);
    }

    #[test]
    fn interpolation_and_oob() {
        let d = random_data(30, 10, 8);
        let f = ensemble_fit(&d, 10, 1, 0.0, 2).unwrap();
        assert!(training_error(&f, &d).unwrap() < 1e-20);
        assert!(gcv(&f, &d).unwrap().degenerate);
        let full = ensemble_fit(&d, 30, 2, 0.0, 2).unwrap();
        assert!(matches!(oob_error(&full, &d), Err(Error::UndefinedOob)));
        assert!(gcv(&full, &d).unwrap().oob_error.is_none());
    }

    /// Smoothing matrix on the union: `S_ij = (1/M) Σ_ℓ x_iᵀ (X_ℓᵀX_ℓ/k + λI)⁺ x_j / k · 1{j ∈ I_ℓ}`,
    /// built with a dense pseudo-inverse.
    fn dense_smoother(fit: &EnsembleFit, d: &Dataset) -> DMatrix<f64> {
        let u = fit.union_indices().indices();
        let p = d.p();
        let mut s = DMatrix::zeros(u.len(), u.len());
        for m in fit.members() {
            let sub = d.x().select_rows(m.subset.indices());
            let k = sub.nrows() as f64;
            let a = sub.tr_mul(&sub) / k + DMatrix::identity(p, p) * fit.lambda();
            let pinv = a.pseudo_inverse(1e-10).unwrap();
            for (a_i, &i) in u.iter().enumerate() {
                let xi = d.x().row(i).transpose();
                for (b_j, &j) in u.iter().enumerate() {
                    if m.subset.contains(j) {
                        let xj = d.x().row(j).transpose();
                        s[(a_i, b_j)] += xi.dot(&(&pinv * xj)) / k / fit.ensemble_size() as f64;
                    }
                }
            }
        }
        s
    }

    #[test]
    fn trace_identity_dense() {
        for (seed, (n, p, k, m)) in [(40, 10, 20, 3), (30, 40, 12, 4), (50, 20, 20, 2)].into_iter().enumerate() {
            let d = random_data(n, p, seed as u64);
            for lambda in [0.0, 0.3] {
                let f = ensemble_fit(&d, k, m, lambda, seed as u64).unwrap();
                let s = dense_smoother(&f, &d);
                assert!((s.trace() - f.mean_trace()).abs() <= 1e-8, "{} vs {}", s.trace(), f.mean_trace());
                // The smoother also reproduces the fitted values on the union.
                let u = f.union_indices().indices();
                let yu = DVector::from_iterator(u.len(), u.iter().map(|&i| d.y()[i]));
                let fitted = predict(&f, &d.x().select_rows(u)).unwrap();
                assert!((&s * yu - fitted).norm() <= 1e-8);
            }
        }
    }

    #[test]
    fn gcv_matches_textbook_single_fit() {
        let d = random_data(25, 8, 12);
        let f = ensemble_fit(&d, 25, 1, 0.7, 0).unwrap();
        let a = d.x().tr_mul(d.x()) / 25.0 + DMatrix::identity(8, 8) * 0.7;
        let s = d.x() * a.try_inverse().unwrap() * d.x().transpose() / 25.0;
        let resid = (DMatrix::identity(25, 25) - &s) * d.y();
        let textbook = resid.norm_squared() / 25.0 / (1.0 - s.trace() / 25.0).powi(2);
        assert_relative_eq!(gcv(&f, &d).unwrap().gcv, textbook, epsilon = 1e-10);

        let big = ensemble_fit(&d, 25, 1, 1e9, 0).unwrap();
        assert_relative_eq!(gcv(&big, &d).unwrap().gcv, d.y().norm_squared() / 25.0, epsilon = 1e-6);
    }

    #[test]
    fn gcv_is_permutation_invariant() {
        let d = random_data(25, 8, 13);
        let perm: Vec<usize> = (0..25).rev().collect();
        let dp = d.select(&perm).unwrap();
        let a = gcv(&ensemble_fit(&d, 25, 1, 0.4, 0).unwrap(), &d).unwrap().gcv;
        let b = gcv(&ensemble_fit(&dp, 25, 1, 0.4, 0).unwrap(), &dp).unwrap().gcv;
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn mse_decomposition_over_pairs() {
        let d = random_data(30, 12, 21);
        for (k, m, lambda) in [(10, 5, 0.0), (15, 4, 0.5)] {
            let f = ensemble_fit(&d, k, m, lambda, 5).unwrap();
            let n = d.n() as f64;
            let err = |b: &DVector<f64>| (d.y() - d.x() * b).norm_squared() / n;
            let singles: f64 = f.members().iter().map(|mm| err(&mm.coefficients)).sum::<f64>() / m as f64;
            let mut pairs = 0.0;
            for a in 0..m {
                for b in 0..m {
                    if a != b {
                        pairs += err(&((&f.members()[a].coefficients + &f.members()[b].coefficients) / 2.0));
                    }
                }
            }
            pairs /= (m * (m - 1)) as f64;
            let mf = m as f64;
            let combo = -(1.0 - 2.0 / mf) * singles + 2.0 * (1.0 - 1.0 / mf) * pairs;
            assert_relative_eq!(err(f.averaged_coefficients()), combo, epsilon = 1e-10);
        }
    }

    #[test]
    fn predictions() {
        let d = random_data(20, 4, 2);
        let f = ensemble_fit(&d, 10, 3, 0.1, 2).unwrap();
        assert_eq!(predict(&f, &DMatrix::zeros(3, 4)).unwrap(), DVector::zeros(3));
        assert_eq!(predict(&f, &DMatrix::identity(4, 4)).unwrap(), f.averaged_coefficients().clone());
        let per_member: DVector<f64> =
            f.members().iter().map(|m| d.x() * &m.coefficients).fold(DVector::zeros(20), |a, b| a + b) / 3.0;
        assert_relative_eq!(predict(&f, d.x()).unwrap(), per_member, epsilon = 1e-12);
        assert!(predict(&f, &DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn risk_of_true_coefficients_is_zero() {
        let pop = Population::isotropic(6, 1.0, 0.0).unwrap();
        let d = random_data(10, 6, 1);
        let mut f = ensemble_fit(&d, 10, 1, 0.0, 0).unwrap();
        f.averaged = pop.beta0.clone();
        assert_eq!(population_risk(&f, &pop).unwrap(), 0.0);
        let y = d.x() * &pop.beta0;
        let test = Dataset::new(d.x().clone(), y).unwrap();
        assert!(conditional_risk(&f, &test).unwrap() < 1e-28);
    }

    #[test]
    fn ridge_path_matches_refits() {
        for (n, p) in [(40, 10), (15, 30)] {
            let d = random_data(n, p, 17);
            let path = RidgePath::new(&d);
            for lambda in [0.0, 0.05, 1.0, 1e9] {
                let b = ridge_fit(d.x(), d.y(), lambda).unwrap();
                assert!((path.coefficients(lambda) - &b).norm() <= 1e-10 * b.norm().max(1.0));
                let f = ensemble_fit(&d, n, 1, lambda, 0).unwrap();
                let g = gcv(&f, &d).unwrap();
                let pt = path.point(lambda);
                assert_relative_eq!(pt.train_error, g.train_error, epsilon = 1e-10, max_relative = 1e-9);
                assert_relative_eq!(pt.trace, g.trace, epsilon = 1e-9);
                if !g.degenerate {
                    assert_relative_eq!(pt.gcv, g.gcv, max_relative = 1e-8);
                }
            }
        }
    }

    #[test]
    fn corrected_gcv_basics() {
        let d = random_data(60, 20, 30);
        let f = ensemble_fit(&d, 60, 1, 0.2, 0).unwrap();
        let c = corrected_gcv(&f, &d).unwrap();
        assert!(c.fallback);
        assert_eq!(c.value, gcv(&f, &d).unwrap().gcv);

        let f = ensemble_fit(&d, 20, 2, 0.0, 0).unwrap();
        let c = corrected_gcv(&f, &d).unwrap();
        // With two members the weights reproduce the out-of-bag error.
        assert!(!c.fallback);
        assert_relative_eq!(c.value, oob_error(&f, &d).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn summary_json() {
        let d = random_data(20, 4, 2);
        let f = ensemble_fit(&d, 10, 3, 0.1, 2).unwrap();
        let s = EnsembleSummary::new(&f, &d).unwrap();
        let back: EnsembleSummary = serde_json::from_str(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
        let mut buf = Vec::new();
        write_coefficients_csv(&f, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn deterministic_and_bounded(seed in 0u64..1000, k in 1usize..30, m in 1usize..6, lambda in 0.0f64..2.0) {
            let d = random_data(30, 12, seed);
            let a = ensemble_fit(&d, k, m, lambda, seed).unwrap();
            let b = ensemble_fit(&d, k, m, lambda, seed).unwrap();
            prop_assert_eq!(&a, &b);
            for mm in a.members() {
                prop_assert!(mm.trace_contribution >= -1e-12);
                prop_assert!(mm.trace_contribution <= k.min(12) as f64 + 1e-9);
            }
        }
    }
}
