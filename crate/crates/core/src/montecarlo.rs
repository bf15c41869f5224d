//! Seeded Gaussian data generation and replicated simulation sweeps that
//! compare empirical GCV, training, out-of-bag and test errors with their
//! deterministic limits.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ensemble::{conditional_risk, corrected_gcv, ensemble_fit, gcv, population_risk, Dataset};
use crate::error::{Error, Result};
use crate::spectra::{ar1_model, Population};
use crate::theory::{asymptotic_risk, gcv_limit_finite_m, AspectPair, EnsembleSize};

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed from a master seed and a path of indices.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(master), |acc, &p| mix(acc ^ mix(p)))
}

/// Draws designs with rows `N(0, Σ)` through the Cholesky factor of `Σ`.
#[derive(Debug, Clone)]
pub struct Sampler {
    population: Population,
    /// `Lᵀ` with `Σ = L Lᵀ`; `None` for `Σ = I`.
    factor_t: Option<DMatrix<f64>>,
}

impl Sampler {
    pub fn new(population: Population) -> Result<Self> {
        let p = population.dim();
        let factor_t = if population.covariance == DMatrix::identity(p, p) {
            None
        } else {
            let chol = nalgebra::Cholesky::new(population.covariance.clone())
                .ok_or(Error::SingularCovariance { eigenvalue: population.eigenvalues.min() })?;
            Some(chol.l().transpose())
        };
        Ok(Self { population, factor_t })
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    /// `n` rows with `y = Xβ0 + ε`, `ε ~ N(0, σ²)`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        let p = self.population.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let x = match &self.factor_t {
            Some(lt) => z * lt,
            None => z,
        };
        let sd = self.population.model.sigma2.sqrt();
        let noise = DVector::from_fn(n, |_, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            sd * e
        });
        let y = &x * &self.population.beta0 + noise;
        Dataset::new(x, y)
    }
}

/// AR(1) data: rows `N(0, Σ_ar1)`, `β0` the mean of the top five
/// eigenvectors, Gaussian noise of variance `sigma2`.
pub fn generate_ar1(n: usize, p: usize, rho_ar1: f64, sigma2: f64, seed: u64) -> Result<(Dataset, DVector<f64>)> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::param(format!("sigma2 = {sigma2} must be finite and nonnegative")));
    }
    let pop = ar1_model(rho_ar1, p, sigma2)?;
    let beta0 = pop.beta0.clone();
    Ok((Sampler::new(pop)?.sample(n, seed)?, beta0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Ar1,
    Isotropic,
}

fn default_rho_ar1() -> f64 {
    0.5
}

/// Sweep definition, read from a flat TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub phi: f64,
    pub p: usize,
    pub reps: usize,
    #[serde(default)]
    pub model: ModelKind,
    #[serde(default = "default_rho_ar1")]
    pub rho_ar1: f64,
    /// Signal energy for the isotropic model (AR(1) fixes it at 1/5).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho2: Option<f64>,
    pub sigma2: f64,
    pub lambda_grid: Vec<f64>,
    /// Subsample ratios `p/k`; `inf` selects the null predictor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_s_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_grid: Option<Vec<usize>>,
    pub m_list: Vec<usize>,
    pub master_seed: u64,
    /// Fresh test rows per rep; defaults to `n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_size: Option<usize>,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: SimConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
            Error::Config { line, message: e.message().to_string() }
        })?;
        config.validate().map_err(|e| match e {
            Error::InvalidParameter(message) => {
                let key = message.split_whitespace().next().unwrap_or("");
                let line =
                    text.lines().position(|l| l.trim_start().starts_with(key) && !key.is_empty()).map_or(0, |i| i + 1);
                Error::Config { line, message }
            }
            other => other,
        })?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// `n = floor(p / φ)`.
    pub fn n(&self) -> usize {
        ((self.p as f64 / self.phi) * (1.0 + 1e-12)).floor() as usize
    }

    /// Subsample sizes, from `k_grid` or `floor(p / φs)`.
    pub fn ks(&self) -> Vec<usize> {
        match (&self.k_grid, &self.phi_s_grid) {
            (Some(ks), _) => ks.clone(),
            (None, Some(phis)) => phis
                .iter()
                .map(|&r| if r.is_infinite() { 0 } else { ((self.p as f64 / r) * (1.0 + 1e-12)).floor() as usize })
                .collect(),
            (None, None) => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::param(format!("phi must be positive, got {}", self.phi)));
        }
        if self.reps == 0 {
            return Err(Error::param("reps must be at least 1"));
        }
        if self.p == 0 {
            return Err(Error::param("p must be positive"));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(Error::param(format!("sigma2 must be finite and nonnegative, got {}", self.sigma2)));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::param("lambda_grid must be a non-empty list of nonnegative numbers"));
        }
        if self.m_list.is_empty() || self.m_list.contains(&0) {
            return Err(Error::param("m_list must be a non-empty list of positive integers"));
        }
        match (&self.k_grid, &self.phi_s_grid) {
            (Some(_), Some(_)) => return Err(Error::param("k_grid and phi_s_grid are mutually exclusive")),
            (None, None) => return Err(Error::param("phi_s_grid or k_grid is required")),
            (None, Some(g)) if g.is_empty() || g.iter().any(|&r| !(r >= self.phi)) => {
                return Err(Error::param("phi_s_grid must be non-empty with entries at least phi"));
            }
            (Some(g), None) if g.is_empty() => return Err(Error::param("k_grid must be non-empty")),
            _ => {}
        }
        let n = self.n();
        if n == 0 {
            return Err(Error::param("phi too large: n = floor(p / phi) is zero"));
        }
        if let Some(&k) = self.ks().iter().max() {
            if k > n {
                return Err(Error::param(format!("k_grid entry {k} exceeds n = {n}")));
            }
        }
        match self.model {
            ModelKind::Ar1 => {
                if self.rho2.is_some() {
                    return Err(Error::param("rho2 applies to the isotropic model only"));
                }
                if !(self.rho_ar1 > 0.0 && self.rho_ar1 < 1.0) {
                    return Err(Error::param(format!("rho_ar1 must lie in (0, 1), got {}", self.rho_ar1)));
                }
                if self.p < 10 {
                    return Err(Error::param("p must be at least 10 for the ar1 model"));
                }
            }
            ModelKind::Isotropic => {
                if self.rho2.is_some_and(|r| !(r >= 0.0 && r.is_finite())) {
                    return Err(Error::param("rho2 must be finite and nonnegative"));
                }
                if self.p < 5 {
                    return Err(Error::param("p must be at least 5 for the isotropic model"));
                }
            }
        }
        Ok(())
    }

    pub fn population(&self) -> Result<Population> {
        match self.model {
            ModelKind::Ar1 => ar1_model(self.rho_ar1, self.p, self.sigma2),
            ModelKind::Isotropic => Population::isotropic(self.p, self.rho2.unwrap_or(1.0), self.sigma2),
        }
    }
}

/// One `(rep, k, λ, M)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub rep: usize,
    pub k: usize,
    pub phi_s: f64,
    pub lambda: f64,
    pub m: usize,
    pub gcv: f64,
    pub corrected_gcv: f64,
    pub train_error: f64,
    pub oob_error: f64,
    pub test_risk: f64,
    pub population_risk: f64,
    pub risk_theory: f64,
    pub gcv_theory: f64,
    pub degenerate: bool,
    /// `ok`, or the reason a value is missing.
    pub status: String,
}

/// Mean and standard error over reps for one `(k, λ, M)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub k: usize,
    pub phi_s: f64,
    pub lambda: f64,
    pub m: usize,
    pub reps: usize,
    pub gcv_mean: f64,
    pub gcv_stderr: f64,
    pub corrected_gcv_mean: f64,
    pub corrected_gcv_stderr: f64,
    pub train_mean: f64,
    pub train_stderr: f64,
    pub oob_mean: f64,
    pub oob_stderr: f64,
    pub test_mean: f64,
    pub test_stderr: f64,
    pub population_risk_mean: f64,
    pub population_risk_stderr: f64,
    /// `gcv - test_risk`.
    pub gap_mean: f64,
    pub gap_stderr: f64,
    pub abs_gap_mean: f64,
    pub risk_theory: f64,
    pub gcv_theory: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub config: SimConfig,
    pub n: usize,
    pub rows: Vec<SimRow>,
    pub aggregate: Vec<AggregateRow>,
}

fn csv_writer<W: Write>(writer: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer)
}

impl SimResult {
    pub fn write_tidy_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_aggregate_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv_writer(writer);
        for r in &self.aggregate {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn find(&self, k: usize, lambda: f64, m: usize) -> Option<&AggregateRow> {
        self.aggregate.iter().find(|a| a.k == k && a.lambda == lambda && a.m == m)
    }
}

struct Theory {
    risk: f64,
    gcv: f64,
    status: String,
}

fn theory_cell(pop: &Population, n: usize, k: usize, lambda: f64, m: usize) -> Theory {
    let p = pop.dim() as f64;
    let phi_s = if k == 0 { f64::INFINITY } else { p / k as f64 };
    let out = AspectPair::new(p / n as f64, phi_s).and_then(|a| {
        let risk = asymptotic_risk(lambda, EnsembleSize::Finite(m), a, &pop.model)?.total;
        let gcv = gcv_limit_finite_m(lambda, m, a, &pop.model)?;
        Ok((risk, gcv))
    });
    match out {
        Ok((risk, gcv)) => Theory { risk, gcv, status: "ok".into() },
        Err(e) => Theory { risk: f64::NAN, gcv: f64::NAN, status: status_of(&e) },
    }
}

fn status_of(e: &Error) -> String {
    match e {
        Error::ExcludedBoundary { .. } => "excluded-boundary".into(),
        Error::DivergentVariance { .. } => "divergent-variance".into(),
        other => format!("error: {other}"),
    }
}

fn run_rep(config: &SimConfig, sampler: &Sampler, n: usize, rep: usize) -> Vec<SimRow> {
    let pop = sampler.population();
    let p = pop.dim();
    let m_max = *config.m_list.iter().max().expect("validated");
    let train = sampler.sample(n, derive_seed(config.master_seed, &[rep as u64, 0]));
    let test = sampler.sample(config.test_size.unwrap_or(n), derive_seed(config.master_seed, &[rep as u64, 1]));
    let mut rows = Vec::new();
    for (ki, k) in config.ks().into_iter().enumerate() {
        let phi_s = if k == 0 { f64::INFINITY } else { p as f64 / k as f64 };
        let cell_seed = derive_seed(config.master_seed, &[rep as u64, 2, ki as u64]);
        for &lambda in &config.lambda_grid {
            let fitted = match (&train, &test) {
                (Ok(train), Ok(test)) => ensemble_fit(train, k, m_max, lambda, cell_seed).map(|f| (f, train, test)),
                (Err(e), _) | (_, Err(e)) => Err(Error::data(e.to_string())),
            };
            for &m in &config.m_list {
                let theory = theory_cell(pop, n, k, lambda, m);
                let mut row = SimRow {
                    rep,
                    k,
                    phi_s,
                    lambda,
                    m,
                    gcv: f64::NAN,
                    corrected_gcv: f64::NAN,
                    train_error: f64::NAN,
                    oob_error: f64::NAN,
                    test_risk: f64::NAN,
                    population_risk: f64::NAN,
                    risk_theory: theory.risk,
                    gcv_theory: theory.gcv,
                    degenerate: false,
                    status: theory.status,
                };
                let filled = fitted.as_ref().map_err(|e| e.to_string()).and_then(|(full, train, test)| {
                    let fit = full.prefix(m).map_err(|e| e.to_string())?;
                    let report = gcv(&fit, train).map_err(|e| e.to_string())?;
                    row.gcv = report.gcv;
                    row.train_error = report.train_error;
                    row.oob_error = report.oob_error.unwrap_or(f64::NAN);
                    row.degenerate = report.degenerate;
                    row.corrected_gcv = corrected_gcv(&fit, train).map_err(|e| e.to_string())?.value;
                    row.test_risk = conditional_risk(&fit, test).map_err(|e| e.to_string())?;
                    row.population_risk = population_risk(&fit, pop).map_err(|e| e.to_string())?;
                    Ok(())
                });
                if let Err(msg) = filled {
                    row.status = format!("fit-error: {msg}");
                }
                rows.push(row);
            }
        }
    }
    rows
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / n;
    if finite.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn aggregate(rows: &[SimRow], cells: usize) -> Vec<AggregateRow> {
    (0..cells)
        .map(|c| {
            let group: Vec<&SimRow> = rows.iter().skip(c).step_by(cells).collect();
            let first = group[0];
            let col = |f: fn(&SimRow) -> f64| mean_stderr(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (gcv_mean, gcv_stderr) = col(|r| r.gcv);
            let (corrected_gcv_mean, corrected_gcv_stderr) = col(|r| r.corrected_gcv);
            let (train_mean, train_stderr) = col(|r| r.train_error);
            let (oob_mean, oob_stderr) = col(|r| r.oob_error);
            let (test_mean, test_stderr) = col(|r| r.test_risk);
            let (population_risk_mean, population_risk_stderr) = col(|r| r.population_risk);
            let (gap_mean, gap_stderr) = col(|r| r.gcv - r.test_risk);
            let (abs_gap_mean, _) = col(|r| (r.gcv - r.test_risk).abs());
            let status = group.iter().map(|r| r.status.as_str()).find(|s| *s != "ok").unwrap_or("ok").to_string();
            AggregateRow {
                k: first.k,
                phi_s: first.phi_s,
                lambda: first.lambda,
                m: first.m,
                reps: group.len(),
                gcv_mean,
                gcv_stderr,
                corrected_gcv_mean,
                corrected_gcv_stderr,
                train_mean,
                train_stderr,
                oob_mean,
                oob_stderr,
                test_mean,
                test_stderr,
                population_risk_mean,
                population_risk_stderr,
                gap_mean,
                gap_stderr,
                abs_gap_mean,
                risk_theory: first.risk_theory,
                gcv_theory: first.gcv_theory,
                status,
            }
        })
        .collect()
}

/// Runs every `(rep, k, λ, M)` cell. Within a rep and `k`, all penalties and
/// ensemble sizes share one set of subsamples; smaller `M` are prefixes of
/// the largest. Cell failures become status markers.
pub fn run_experiment(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let sampler = Sampler::new(config.population()?)?;
    let n = config.n();
    let one = |rep: usize| run_rep(config, &sampler, n, rep);
    #[cfg(feature = "parallel")]
    let per_rep: Vec<Vec<SimRow>> = {
        use rayon::prelude::*;
        (0..config.reps).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_rep: Vec<Vec<SimRow>> = (0..config.reps).map(one).collect();
    let rows: Vec<SimRow> = per_rep.into_iter().flatten().collect();
    let cells = config.ks().len() * config.lambda_grid.len() * config.m_list.len();
    let aggregate = aggregate(&rows, cells);
    Ok(SimResult { config: config.clone(), n, rows, aggregate })
}
