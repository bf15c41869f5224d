//! Discrete spectral laws for the feature covariance (`H`) and for the
//! signal's projections onto the covariance eigenbasis (`G`), plus the
//! populations (AR(1), isotropic) the experiments draw data from.
//!
//! Every law here is a finite set of weighted atoms, so integrals against
//! `H` or `G` are exact weighted sums.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature dimension used for population spectra when none is given.
pub const DEFAULT_P_REF: usize = 500;

const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: f64,
    pub weight: f64,
}

/// A probability measure on `(0, inf)` made of finitely many atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralMeasure {
    atoms: Vec<Atom>,
}

impl SpectralMeasure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::param("spectral measure needs at least one atom"));
        }
        let mut total = 0.0;
        for a in &atoms {
            if !(a.value.is_finite() && a.value > 0.0) {
                return Err(Error::param(format!("atom location {} is not positive", a.value)));
            }
            if !(0.0..=1.0).contains(&a.weight) {
                return Err(Error::param(format!("atom weight {} outside [0, 1]", a.weight)));
            }
            total += a.weight;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::param(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { atoms })
    }

    /// Equal weights on the given locations.
    pub fn uniform(values: &[f64]) -> Result<Self> {
        let w = 1.0 / values.len().max(1) as f64;
        Self::new(values.iter().map(|&value| Atom { value, weight: w }).collect())
    }

    pub fn point_mass(value: f64) -> Result<Self> {
        Self::new(vec![Atom { value, weight: 1.0 }])
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `∫ f dμ`.
    #[inline]
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|a| a.weight * f(a.value)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.integrate(|r| r)
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn min_value(&self) -> f64 {
        self.atoms.iter().map(|a| a.value).fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.atoms.iter().map(|a| a.value).fold(0.0, f64::max)
    }

    /// Two-column CSV with header `eigenvalue,weight`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record(["eigenvalue", "weight"])?;
        for a in &self.atoms {
            w.write_record([a.value.to_string(), a.weight.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let mut atoms = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::data(format!("row {}: expected 2 columns, got {}", i + 1, rec.len())));
            }
            let parse =
                |s: &str| s.parse::<f64>().map_err(|_| Error::data(format!("row {}: '{s}' is not a number", i + 1)));
            atoms.push(Atom { value: parse(&rec[0])?, weight: parse(&rec[1])? });
        }
        Self::new(atoms)
    }

    pub fn to_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn from_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Population description consumed by every asymptotic formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Limiting spectral law of the covariance.
    pub h: SpectralMeasure,
    /// Law of the signal energy across covariance eigenvalues.
    pub g: SpectralMeasure,
    /// Signal energy `lim ||beta0||^2`.
    pub rho2: f64,
    /// Noise variance.
    pub sigma2: f64,
}

impl ModelSpec {
    pub fn new(h: SpectralMeasure, g: SpectralMeasure, rho2: f64, sigma2: f64) -> Result<Self> {
        if !(rho2 >= 0.0 && rho2.is_finite()) || !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(Error::param(format!("rho2 = {rho2}, sigma2 = {sigma2} must be finite and nonnegative")));
        }
        Ok(Self { h, g, rho2, sigma2 })
    }

    /// `H = G = δ_1`.
    pub fn isotropic(rho2: f64, sigma2: f64) -> Result<Self> {
        let unit = SpectralMeasure::point_mass(1.0)?;
        Self::new(unit.clone(), unit, rho2, sigma2)
    }

    /// Risk of the zero predictor, `σ² + ρ² ∫ r dG`.
    pub fn null_risk(&self) -> f64 {
        self.sigma2 + self.rho2 * self.g.mean()
    }

    pub fn with_noise(&self, sigma2: f64) -> Self {
        Self { sigma2, ..self.clone() }
    }

    pub fn with_signal(&self, rho2: f64) -> Self {
        Self { rho2, ..self.clone() }
    }
}

/// `G` and `ρ²` derived from a concrete coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMeasure {
    pub g: SpectralMeasure,
    pub rho2: f64,
    /// Set when `beta0 = 0`; `g` is then an arbitrary placeholder.
    pub null_signal: bool,
}

/// A finite-dimensional population: covariance, its eigensystem, the true
/// coefficients and the matching limiting description.
#[derive(Debug, Clone)]
pub struct Population {
    pub covariance: DMatrix<f64>,
    /// Descending.
    pub eigenvalues: DVector<f64>,
    /// Columns match `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    pub beta0: DVector<f64>,
    pub model: ModelSpec,
}

impl Population {
    pub fn dim(&self) -> usize {
        self.beta0.len()
    }

    /// Isotropic features with `beta0` spread evenly over the first five
    /// coordinates so that `||beta0||^2 = rho2`.
    pub fn isotropic(p: usize, rho2: f64, sigma2: f64) -> Result<Self> {
        if p < 5 {
            return Err(Error::param("isotropic population needs p >= 5"));
        }
        let model = ModelSpec::isotropic(rho2, sigma2)?;
        let mut beta0 = DVector::zeros(p);
        let a = (rho2 / 5.0).sqrt();
        for j in 0..5 {
            beta0[j] = a;
        }
        Ok(Self {
            covariance: DMatrix::identity(p, p),
            eigenvalues: DVector::from_element(p, 1.0),
            eigenvectors: DMatrix::identity(p, p),
            beta0,
            model,
        })
    }
}

/// AR(1) population with `Σ_ij = rho_ar1^|i-j|` and `beta0` the average of
/// the top five eigenvectors.
///
/// `H` is the empirical eigenvalue law of `Σ` (one atom per eigenvalue) and
/// `G` puts weight 1/5 on each of the top five eigenvalues. `ρ²` is
/// `||beta0||² = 1/5`; note this differs from `beta0ᵀ Σ beta0`, which is
/// the signal *variance* `ρ² ∫ r dG`.
pub fn ar1_model(rho_ar1: f64, p_ref: usize, sigma2: f64) -> Result<Population> {
    if !(rho_ar1 > 0.0 && rho_ar1 < 1.0) {
        return Err(Error::param(format!("rho_ar1 = {rho_ar1} outside (0, 1)")));
    }
    if p_ref < 10 {
        return Err(Error::param(format!("p_ref = {p_ref} must be at least 10")));
    }
    let covariance = ar1_covariance(rho_ar1, p_ref);
    let (eigenvalues, eigenvectors) = sorted_eigen(&covariance)?;
    let mut beta0 = DVector::zeros(p_ref);
    for j in 0..5 {
        beta0 += eigenvectors.column(j) / 5.0;
    }
    let h = SpectralMeasure::uniform(eigenvalues.as_slice())?;
    let g = SpectralMeasure::uniform(&eigenvalues.as_slice()[..5])?;
    let model = ModelSpec::new(h, g, 0.2, sigma2)?;
    Ok(Population { covariance, eigenvalues, eigenvectors, beta0, model })
}

pub fn ar1_covariance(rho_ar1: f64, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| rho_ar1.powi(i.abs_diff(j) as i32))
}

/// Eigenvalue law of a symmetric positive definite matrix, atoms descending.
pub fn empirical_spectrum(covariance: &DMatrix<f64>) -> Result<SpectralMeasure> {
    let (values, _) = sorted_eigen(covariance)?;
    SpectralMeasure::uniform(values.as_slice())
}

/// `G` puts weight `(beta0ᵀ w_i)² / ||beta0||²` on eigenvalue `r_i`.
pub fn signal_measure(
    beta0: &DVector<f64>,
    eigenvectors: &DMatrix<f64>,
    eigenvalues: &DVector<f64>,
) -> Result<SignalMeasure> {
    let p = beta0.len();
    if eigenvectors.shape() != (p, p) || eigenvalues.len() != p {
        return Err(Error::param("eigensystem dimensions do not match beta0"));
    }
    let gram = eigenvectors.tr_mul(eigenvectors);
    let off = (gram - DMatrix::<f64>::identity(p, p)).amax();
    if off > 1e-10 {
        return Err(Error::param(format!("eigenvectors not orthonormal (deviation {off:e})")));
    }
    let rho2 = beta0.norm_squared();
    if rho2 == 0.0 {
        return Ok(SignalMeasure {
            g: SpectralMeasure::uniform(eigenvalues.as_slice())?,
            rho2: 0.0,
            null_signal: true,
        });
    }
    let proj = eigenvectors.tr_mul(beta0);
    let mut atoms: Vec<Atom> =
        proj.iter().zip(eigenvalues.iter()).map(|(c, &value)| Atom { value, weight: c * c / rho2 }).collect();
    // Orthonormality holds to 1e-10, so renormalize the rounding residue away.
    let total: f64 = atoms.iter().map(|a| a.weight).sum();
    for a in &mut atoms {
        a.weight /= total;
    }
    Ok(SignalMeasure { g: SpectralMeasure::new(atoms)?, rho2, null_signal: false })
}

/// Eigenvalues (descending) and matching eigenvector columns.
pub fn sorted_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (p, q) = m.shape();
    if p != q || p == 0 {
        return Err(Error::param(format!("matrix is {p}x{q}, expected square and non-empty")));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..p {
        for j in (i + 1)..p {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::param(format!("matrix not symmetric at ({i}, {j})")));
            }
        }
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(p, p, |r, c| eig.eigenvectors[(r, order[c])]);
    if let Some(&min) = values.as_slice().last() {
        if min <= 0.0 {
            return Err(Error::SingularCovariance { eigenvalue: min });
        }
    }
    Ok((values, vectors))
}
