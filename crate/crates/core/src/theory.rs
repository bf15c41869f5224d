//! Deterministic limits for subsample ridge ensembles: prediction risk, the
//! GCV numerator and denominator, finite-M GCV, optimal penalties and
//! subsample ratios, and the risk equivalence contours.
//!
//! Risks use the pieces
//!
//! ```text
//! B(ϑ, θ) = ρ² (1 + ṽ(ϑ, θ)) c̃(θ),   V(ϑ, θ) = σ² ṽ(ϑ, θ)
//! R_M = σ² + M⁻¹ [B + V](φs, φs) + (1 - M⁻¹) [B + V](φ, φs)
//! ```
//!
//! all evaluated at penalty `λ`. `φs = inf` is the null predictor.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed_point::{solve_v, FixedPointSolution};
use crate::optimize::log_grid_minimize;
use crate::spectra::{ModelSpec, SpectralMeasure};

/// Lower end of the log-scale searches over `λ`.
pub const LAMBDA_MIN: f64 = 1e-6;
/// Upper end of the log-scale searches over `λ` and `φs`.
pub const SEARCH_MAX: f64 = 1e6;
/// Smallest `φs` searched when ridgeless fits would hit `φs = 1`.
pub const PHI_S_FLOOR: f64 = 1.000001;
const SEARCH_TOL: f64 = 1e-8;
const SEARCH_POINTS: usize = 121;

/// `(φ, φs)` with `0 < φ <= φs <= inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AspectPair {
    pub phi: f64,
    pub phi_s: f64,
}

impl AspectPair {
    pub fn new(phi: f64, phi_s: f64) -> Result<Self> {
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::param(format!("phi = {phi} must be positive and finite")));
        }
        if !(phi_s >= phi) {
            return Err(Error::param(format!("phi_s = {phi_s} must be at least phi = {phi}")));
        }
        Ok(Self { phi, phi_s })
    }

    /// No subsampling, `φs = φ`.
    pub fn full(phi: f64) -> Result<Self> {
        Self::new(phi, phi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnsembleSize {
    Finite(usize),
    Infinite,
}

impl EnsembleSize {
    /// `1/M`, zero for the full ensemble.
    pub fn inverse(self) -> f64 {
        match self {
            EnsembleSize::Finite(m) => 1.0 / m as f64,
            EnsembleSize::Infinite => 0.0,
        }
    }

    fn validate(self) -> Result<Self> {
        match self {
            EnsembleSize::Finite(0) => Err(Error::param("ensemble size must be at least 1")),
            m => Ok(m),
        }
    }
}

impl fmt::Display for EnsembleSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnsembleSize::Finite(m) => write!(f, "{m}"),
            EnsembleSize::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for EnsembleSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(EnsembleSize::Infinite);
        }
        let m: usize = t.parse().map_err(|_| Error::param(format!("'{s}' is not an ensemble size")))?;
        EnsembleSize::Finite(m).validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskDecomposition {
    pub sigma2: f64,
    pub bias: f64,
    pub variance: f64,
    pub total: f64,
    pub ensemble_size: EnsembleSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourPoint {
    pub lambda: f64,
    pub phi_s: f64,
    pub theta: f64,
}

/// Minimizer and minimum of a one-dimensional risk search. `argument` may
/// be `+inf` (null predictor).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub argument: f64,
    pub risk: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointOptimum {
    pub lambda: f64,
    pub phi_s: f64,
    pub risk: f64,
}

/// Everything the risk and GCV limits share for one `(λ, φ, φs)`.
#[derive(Debug, Clone, Copy)]
struct Pieces {
    ell: f64,
    /// `B(φs, φs)`, `V(φs, φs)`.
    b1: f64,
    v1: f64,
    /// `B(φ, φs)`, `V(φ, φs)`.
    b_inf: f64,
    v_inf: f64,
    sigma2: f64,
}

impl Pieces {
    fn new(lambda: f64, aspects: AspectPair, model: &ModelSpec) -> Result<Self> {
        let sigma2 = model.sigma2;
        if aspects.phi_s.is_infinite() {
            let b = model.rho2 * model.g.mean();
            return Ok(Self { ell: 0.0, b1: b, v1: 0.0, b_inf: b, v_inf: 0.0, sigma2 });
        }
        let sol = solve_v(lambda, aspects.phi_s, &model.h)?;
        let (b1, v1) = bias_variance(&sol, aspects.phi_s, model)?;
        let (b_inf, v_inf) = bias_variance(&sol, aspects.phi, model)?;
        Ok(Self { ell: sol.ell, b1, v1, b_inf, v_inf, sigma2 })
    }

    fn decomposition(&self, m: EnsembleSize) -> RiskDecomposition {
        let w = m.inverse();
        let bias = w * self.b1 + (1.0 - w) * self.b_inf;
        let variance = w * self.v1 + (1.0 - w) * self.v_inf;
        RiskDecomposition {
            sigma2: self.sigma2,
            bias,
            variance,
            total: self.sigma2 + bias + variance,
            ensemble_size: m,
        }
    }

    fn r1(&self) -> f64 {
        self.sigma2 + self.b1 + self.v1
    }

    fn r_inf(&self) -> f64 {
        self.sigma2 + self.b_inf + self.v_inf
    }

    /// Limits of the training error over the union of `M = 1, 2` members.
    fn train_1_2(&self, aspects: AspectPair) -> (f64, f64) {
        let (phi, phi_s, l) = (aspects.phi, aspects.phi_s, self.ell);
        let (r1, r_inf) = (self.r1(), self.r_inf());
        let t1 = l * l * r1;
        let d = 2.0 * phi_s - phi;
        let t2 = 0.5 * (phi_s - phi) / d * r1
            + 0.5 * (l * l * phi_s / d * r1 + (2.0 * l * (phi_s - phi) / d + l * l * phi / d) * r_inf);
        (t1, t2)
    }
}

fn bias_variance(sol: &FixedPointSolution, vartheta: f64, model: &ModelSpec) -> Result<(f64, f64)> {
    let tv = sol.tilde_v(vartheta)?;
    let tc = sol.tilde_c(&model.g);
    Ok((model.rho2 * (1.0 + tv) * tc, model.sigma2 * tv))
}

pub fn asymptotic_risk(
    lambda: f64,
    m: EnsembleSize,
    aspects: AspectPair,
    model: &ModelSpec,
) -> Result<RiskDecomposition> {
    let m = m.validate()?;
    Ok(Pieces::new(lambda, aspects, model)?.decomposition(m))
}

/// `((φs - φ)/φs + (φ/φs) ℓ)²`.
pub fn gcv_denominator_limit(lambda: f64, aspects: AspectPair, h: &SpectralMeasure) -> Result<f64> {
    if aspects.phi_s.is_infinite() {
        return Ok(1.0);
    }
    let ell = solve_v(lambda, aspects.phi_s, h)?.ell;
    Ok(denominator(aspects, ell))
}

fn denominator(aspects: AspectPair, ell: f64) -> f64 {
    let u = aspects.phi / aspects.phi_s;
    let base = 1.0 - u + u * ell;
    base * base
}

/// Limit of the training error of the `M`-ensemble over the union of its
/// subsamples, for `M` in `{1, 2, inf}`.
pub fn training_error_limit(lambda: f64, m: EnsembleSize, aspects: AspectPair, model: &ModelSpec) -> Result<f64> {
    if matches!(m, EnsembleSize::Finite(m) if m == 0 || m > 2) {
        return Err(Error::param(format!("training error limit is available for M in {{1, 2, inf}}, got {m}")));
    }
    if aspects.phi_s.is_infinite() {
        return Ok(model.null_risk());
    }
    let pieces = Pieces::new(lambda, aspects, model)?;
    let (t1, t2) = pieces.train_1_2(aspects);
    Ok(match m {
        EnsembleSize::Finite(1) => t1,
        EnsembleSize::Finite(_) => t2,
        EnsembleSize::Infinite => {
            let (e1, e2) = union_errors(&pieces, aspects, t1, t2, 1.0, 1.0);
            2.0 * e2 - e1
        }
    })
}

/// `ℰ_j = c_j 𝒯_j + (1 - c_j) R_j` for `j = 1, 2`: training error of `j`
/// members over a reference set, where `c_j` is the share of that set
/// covered by `j` members. The reference set is `[n]` when `norm = 1` and the
/// union of the whole ensemble when `norm` is its coverage.
fn union_errors(pieces: &Pieces, aspects: AspectPair, t1: f64, t2: f64, norm1: f64, norm2: f64) -> (f64, f64) {
    let u1 = aspects.phi / aspects.phi_s;
    let u2 = u1 * (2.0 - u1);
    let (c1, c2) = (u1 / norm1, u2 / norm2);
    let r1 = pieces.r1();
    let r2 = 0.5 * (r1 + pieces.r_inf());
    (c1 * t1 + (1.0 - c1) * r1, c2 * t2 + (1.0 - c2) * r2)
}

/// Limit of GCV for the full ensemble, `𝒯_∞ / D`.
pub fn gcv_limit(lambda: f64, aspects: AspectPair, model: &ModelSpec) -> Result<f64> {
    if aspects.phi_s.is_infinite() {
        return Ok(model.null_risk());
    }
    let pieces = Pieces::new(lambda, aspects, model)?;
    let d = denominator(aspects, pieces.ell);
    if d == 0.0 {
        // λ = 0 and φ = φs > 1: numerator and denominator vanish together.
        return Ok(pieces.r_inf());
    }
    let (t1, t2) = pieces.train_1_2(aspects);
    let (e1, e2) = union_errors(&pieces, aspects, t1, t2, 1.0, 1.0);
    Ok((2.0 * e2 - e1) / d)
}

/// Limit of GCV for an `M`-ensemble, with training error and degrees of
/// freedom both measured over the union of the `M` subsamples.
pub fn gcv_limit_finite_m(lambda: f64, m: usize, aspects: AspectPair, model: &ModelSpec) -> Result<f64> {
    if m == 0 {
        return Err(Error::param("ensemble size must be at least 1"));
    }
    if aspects.phi_s.is_infinite() {
        return Ok(model.null_risk());
    }
    let pieces = Pieces::new(lambda, aspects, model)?;
    let u1 = aspects.phi / aspects.phi_s;
    // Fraction of [n] covered by M members, 1 - (1 - u1)^M.
    let cover = match m {
        _ if u1 >= 1.0 => 1.0,
        1 => u1,
        _ => -(m as f64 * (-u1).ln_1p()).exp_m1(),
    };
    let c1 = u1 / cover;
    let base = 1.0 - c1 * (1.0 - pieces.ell);
    let d = base * base;
    if base.abs() <= 1e-12 {
        // Every member interpolates the whole union.
        return Ok(pieces.r1());
    }
    let (t1, t2) = pieces.train_1_2(aspects);
    let (e1, e2) = union_errors(&pieces, aspects, t1, t2, cover, cover);
    let t_m = 2.0 * e2 - e1 + 2.0 / m as f64 * (e1 - e2);
    Ok(t_m / d)
}

/// Asymptotic bias of ridgeless GCV for the two-member ensemble.
pub fn inconsistency_gap(aspects: AspectPair, model: &ModelSpec) -> Result<f64> {
    let AspectPair { phi, phi_s } = aspects;
    if !(phi_s > 1.0 && phi_s > phi && phi_s.is_finite()) {
        return Err(Error::param(format!("phi_s = {phi_s} must be finite, above 1 and above phi = {phi}")));
    }
    if !(model.rho2 > 0.0 && model.sigma2 > 0.0) {
        return Err(Error::param("inconsistency gap needs rho2 > 0 and sigma2 > 0"));
    }
    let gcv = gcv_limit_finite_m(0.0, 2, aspects, model)?;
    let risk = asymptotic_risk(0.0, EnsembleSize::Finite(2), aspects, model)?.total;
    Ok(gcv - risk)
}

/// Best ridge penalty without subsampling: minimizes `R_{λ,1}` at `φs = φ`.
pub fn optimal_lambda(phi: f64, model: &ModelSpec) -> Result<Optimum> {
    let aspects = AspectPair::full(phi)?;
    if model.rho2 == 0.0 {
        return Ok(Optimum { argument: f64::INFINITY, risk: model.sigma2 });
    }
    if model.sigma2 == 0.0 && phi < 1.0 {
        return Ok(Optimum { argument: 0.0, risk: 0.0 });
    }
    let risk = |lambda: f64| {
        asymptotic_risk(lambda, EnsembleSize::Finite(1), aspects, model).map_or(f64::INFINITY, |r| r.total)
    };
    let (arg, val) = log_grid_minimize(risk, LAMBDA_MIN, SEARCH_MAX, SEARCH_POINTS, SEARCH_TOL);
    let mut best = Optimum { argument: arg, risk: val };
    let at_zero = risk(0.0);
    if at_zero <= best.risk {
        best = Optimum { argument: 0.0, risk: at_zero };
    }
    if model.null_risk() < best.risk {
        best = Optimum { argument: f64::INFINITY, risk: model.null_risk() };
    }
    Ok(best)
}

/// Best subsample ratio for the full ridgeless ensemble: minimizes
/// `R_{0,∞}` over `φs`. Ties go to the smallest `φs`.
pub fn optimal_subsample(phi: f64, model: &ModelSpec) -> Result<Optimum> {
    AspectPair::full(phi)?;
    if model.rho2 == 0.0 {
        return Ok(Optimum { argument: f64::INFINITY, risk: model.sigma2 });
    }
    if model.sigma2 == 0.0 && phi < 1.0 {
        return Ok(Optimum { argument: phi, risk: 0.0 });
    }
    minimize_phi_s(0.0, phi, model, SEARCH_POINTS)
}

fn minimize_phi_s(lambda: f64, phi: f64, model: &ModelSpec, points: usize) -> Result<Optimum> {
    let risk = |phi_s: f64| {
        AspectPair::new(phi, phi_s)
            .and_then(|a| asymptotic_risk(lambda, EnsembleSize::Infinite, a, model))
            .map_or(f64::INFINITY, |r| r.total)
    };
    let lo = if lambda == 0.0 { phi.max(PHI_S_FLOOR) } else { phi };
    let mut best = Optimum { argument: f64::INFINITY, risk: f64::INFINITY };
    if lo < SEARCH_MAX {
        let (arg, val) = log_grid_minimize(risk, lo, SEARCH_MAX, points, SEARCH_TOL);
        best = Optimum { argument: arg, risk: val };
    }
    if lambda == 0.0 && phi != 1.0 {
        let at_phi = risk(phi);
        if at_phi <= best.risk {
            best = Optimum { argument: phi, risk: at_phi };
        }
    }
    if model.null_risk() < best.risk {
        best = Optimum { argument: f64::INFINITY, risk: model.null_risk() };
    }
    Ok(best)
}

/// Joint minimum of `R_{λ,∞}` over `(λ, φs)`: an outer search over `λ` of
/// the inner minimum over `φs`.
pub fn optimal_joint(phi: f64, model: &ModelSpec) -> Result<JointOptimum> {
    AspectPair::full(phi)?;
    if model.rho2 == 0.0 {
        return Ok(JointOptimum { lambda: f64::INFINITY, phi_s: f64::INFINITY, risk: model.sigma2 });
    }
    let inner = |lambda: f64| minimize_phi_s(lambda, phi, model, 61).map_or(f64::INFINITY, |o| o.risk);
    let (arg, _) = log_grid_minimize(inner, LAMBDA_MIN, SEARCH_MAX, 61, SEARCH_TOL);
    let mut best = JointOptimum { lambda: f64::INFINITY, phi_s: f64::INFINITY, risk: model.null_risk() };
    for lambda in [0.0, arg] {
        let o = minimize_phi_s(lambda, phi, model, SEARCH_POINTS)?;
        if o.risk < best.risk || (o.risk == best.risk && lambda < best.lambda) {
            best = JointOptimum { lambda, phi_s: o.argument, risk: o.risk };
        }
    }
    Ok(best)
}

/// Penalty `λ̄` at which the unsubsampled ridge risk at `φ` matches the full
/// ridgeless ensemble at `φ̄s`: `λ̄ = (φ̄s - φ) ∫ r / (1 + v(0; φ̄s) r) dH`.
pub fn contour_lambda_for_phis(phi_s_bar: f64, phi: f64, h: &SpectralMeasure) -> Result<f64> {
    AspectPair::new(phi, phi_s_bar)?;
    if phi_s_bar.is_infinite() {
        return Ok(f64::INFINITY);
    }
    if phi_s_bar == phi {
        return Ok(0.0);
    }
    let sol = solve_v(0.0, phi_s_bar, h)?;
    Ok((phi_s_bar - phi) * sol.resolvent_mean(h))
}

/// Point `((1 - θ) λ̄, φ + θ (φ̄s - φ))` on the segment joining `(λ̄, φ)` and
/// `(0, φ̄s)`.
pub fn equivalence_path(lambda_bar: f64, phi_s_bar: f64, phi: f64, theta: f64) -> Result<ContourPoint> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::param(format!("path parameter {theta} outside [0, 1]")));
    }
    if !(lambda_bar >= 0.0) || !(phi_s_bar >= phi) {
        return Err(Error::param("need lambda_bar >= 0 and phi_s_bar >= phi"));
    }
    let lambda = if theta == 1.0 { 0.0 } else { (1.0 - theta) * lambda_bar };
    let phi_s = if theta == 0.0 { phi } else { phi + theta * (phi_s_bar - phi) };
    Ok(ContourPoint { lambda, phi_s, theta })
}

/// Risk totals on a `λ × φs` grid; cells that fail to evaluate hold NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSurface {
    pub phi: f64,
    pub ensemble_size: EnsembleSize,
    pub lambdas: Vec<f64>,
    pub phi_s: Vec<f64>,
    /// `values[i][j]` is the risk at `(lambdas[i], phi_s[j])`.
    pub values: Vec<Vec<f64>>,
}

impl RiskSurface {
    pub fn nan_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if v.is_nan() {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Header `lambda\phi_s,<φs values>`, then one row per `λ`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let mut header = vec!["lambda\\phi_s".to_string()];
        header.extend(self.phi_s.iter().map(f64::to_string));
        w.write_record(&header)?;
        for (lambda, row) in self.lambdas.iter().zip(&self.values) {
            let mut rec = vec![lambda.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn risk_surface(lambdas: &[f64], phi_s_grid: &[f64], phi: f64, m: EnsembleSize, model: &ModelSpec) -> RiskSurface {
    let row = |&lambda: &f64| -> Vec<f64> {
        phi_s_grid
            .iter()
            .map(|&phi_s| {
                AspectPair::new(phi, phi_s)
                    .and_then(|a| asymptotic_risk(lambda, m, a, model))
                    .map_or(f64::NAN, |r| r.total)
            })
            .collect()
    };
    #[cfg(feature = "parallel")]
    let values = {
        use rayon::prelude::*;
        lambdas.par_iter().map(row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let values = lambdas.iter().map(row).collect();
    RiskSurface { phi, ensemble_size: m, lambdas: lambdas.to_vec(), phi_s: phi_s_grid.to_vec(), values }
}

/// Minimizer over `φs` of the full-ensemble GCV limit at penalty `λ`.
pub fn argmin_phi_s_gcv(lambda: f64, phi: f64, model: &ModelSpec) -> Result<Optimum> {
    AspectPair::full(phi)?;
    let f = |phi_s: f64| AspectPair::new(phi, phi_s).and_then(|a| gcv_limit(lambda, a, model)).unwrap_or(f64::INFINITY);
    let lo = if lambda == 0.0 { phi.max(PHI_S_FLOOR) } else { phi };
    let (argument, risk) = log_grid_minimize(f, lo, SEARCH_MAX, SEARCH_POINTS, SEARCH_TOL);
    Ok(Optimum { argument, risk })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use crate::spectra::ar1_model;

    const INF: EnsembleSize = EnsembleSize::Infinite;
    const ONE: EnsembleSize = EnsembleSize::Finite(1);

    fn iso() -> ModelSpec {
        ModelSpec::isotropic(1.0, 1.0).unwrap()
    }

    fn ap(phi: f64, phi_s: f64) -> AspectPair {
        AspectPair::new(phi, phi_s).unwrap()
    }

    #[test]
    fn isotropic_risks() {
        let m = iso();
        let r = asymptotic_risk(0.0, ONE, ap(2.0, 2.0), &m).unwrap();
        assert_relative_eq!(r.bias, 0.5, epsilon = 1e-12);
        assert_relative_eq!(r.variance, 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.total, 2.5, epsilon = 1e-12);

        let r = asymptotic_risk(0.0, INF, ap(0.5, 2.0), &m).unwrap();
        assert_relative_eq!(r.bias, 2.0 / 7.0, epsilon = 1e-12);
        assert_relative_eq!(r.variance, 1.0 / 7.0, epsilon = 1e-12);
        assert_relative_eq!(r.total, 10.0 / 7.0, epsilon = 1e-12);

        let r = asymptotic_risk(0.0, EnsembleSize::Finite(2), ap(0.5, 2.0), &m).unwrap();
        assert_relative_eq!(r.total, (2.5 + 10.0 / 7.0) / 2.0, epsilon = 1e-12);

        for lambda in [0.0, 0.3, 10.0] {
            for mm in [ONE, INF, EnsembleSize::Finite(7)] {
                let r = asymptotic_risk(lambda, mm, ap(0.5, f64::INFINITY), &m).unwrap();
                assert_eq!(r.total, 2.0);
            }
        }
        assert_eq!(r.total, r.sigma2 + r.bias + r.variance);
    }

    #[test]
    fn ridgeless_threshold_is_excluded() {
        let m = iso();
        assert!(matches!(asymptotic_risk(0.0, ONE, ap(0.5, 1.0), &m), Err(Error::ExcludedBoundary { .. })));
        assert!(asymptotic_risk(0.0, EnsembleSize::Finite(0), ap(0.5, 2.0), &m).is_err());
    }

    #[test]
    fn denominators() {
        let h = SpectralMeasure::point_mass(1.0).unwrap();
        assert_relative_eq!(gcv_denominator_limit(0.0, ap(0.5, 2.0), &h).unwrap(), 0.5625, epsilon = 1e-15);
        assert_relative_eq!(gcv_denominator_limit(0.0, ap(0.5, 0.5), &h).unwrap(), 0.25, epsilon = 1e-15);
        let ell = solve_v(0.7, 1.3, &h).unwrap().ell;
        assert_relative_eq!(gcv_denominator_limit(0.7, ap(1.3, 1.3), &h).unwrap(), ell * ell, epsilon = 1e-15);
    }

    #[test]
    fn training_errors() {
        let m = iso();
        assert_eq!(training_error_limit(0.0, ONE, ap(0.5, 2.0), &m).unwrap(), 0.0);
        let t = training_error_limit(0.0, INF, ap(0.5, 2.0), &m).unwrap();
        assert_relative_eq!(t, 0.5625 * 10.0 / 7.0, epsilon = 1e-12);
        let t = training_error_limit(1e8, ONE, ap(0.5, 2.0), &m).unwrap();
        assert_relative_eq!(t, 2.0, epsilon = 1e-6);
        assert!(training_error_limit(0.0, EnsembleSize::Finite(3), ap(0.5, 2.0), &m).is_err());
    }

    #[test]
    fn gcv_limits() {
        let m = iso();
        assert_relative_eq!(gcv_limit(0.0, ap(0.5, 2.0), &m).unwrap(), 10.0 / 7.0, epsilon = 1e-12);
        assert_eq!(gcv_limit(0.0, ap(0.5, f64::INFINITY), &m).unwrap(), 2.0);
        let opt = optimal_lambda(0.1, &m).unwrap();
        assert_relative_eq!(gcv_limit(opt.argument, ap(0.1, 0.1), &m).unwrap(), opt.risk, epsilon = 1e-10);
        // Interpolating full-data fit: 0/0 resolved to the risk.
        assert_relative_eq!(gcv_limit(0.0, ap(2.0, 2.0), &m).unwrap(), 2.5, epsilon = 1e-12);
    }

    /// Training error limit at `M = 2`, built from scratch for ridgeless
    /// members: each member interpolates its own subsample, so on the part
    /// of the union seen by one member only the residual is half the other
    /// member's out-of-sample residual.
    fn ridgeless_m2_gcv_oracle(phi: f64, phi_s: f64, m: &ModelSpec) -> f64 {
        let r1 = asymptotic_risk(0.0, ONE, ap(phi, phi_s), m).unwrap().total;
        let u = phi / phi_s;
        let only_one = 2.0 * u * (1.0 - u) / (u * (2.0 - u));
        let train = only_one * 0.25 * r1;
        let df = 1.0 / (2.0 - u);
        train / ((1.0 - df) * (1.0 - df))
    }

    #[test]
    fn finite_m_gcv() {
        let m = iso();
        let g2 = gcv_limit_finite_m(0.0, 2, ap(0.5, 2.0), &m).unwrap();
        assert_relative_eq!(g2, 35.0 / 12.0, epsilon = 1e-12);
        assert_relative_eq!(g2, ridgeless_m2_gcv_oracle(0.5, 2.0, &m), epsilon = 1e-12);
        assert_relative_eq!(
            gcv_limit_finite_m(0.0, 1_000_000, ap(0.5, 2.0), &m).unwrap(),
            gcv_limit(0.0, ap(0.5, 2.0), &m).unwrap(),
            epsilon = 1e-4
        );
        assert_relative_eq!(gcv_limit_finite_m(0.0, 1, ap(2.0, 2.0), &m).unwrap(), 2.5, epsilon = 1e-12);
        assert_relative_eq!(gcv_limit_finite_m(0.0, 1, ap(0.5, 2.0), &m).unwrap(), 2.5, epsilon = 1e-12);
        assert_relative_eq!(
            gcv_limit_finite_m(0.4, 1, ap(0.3, 0.3), &m).unwrap(),
            asymptotic_risk(0.4, ONE, ap(0.3, 0.3), &m).unwrap().total,
            epsilon = 1e-12
        );
    }

    #[test]
    fn inconsistency() {
        let m = iso();
        let c = inconsistency_gap(ap(0.5, 2.0), &m).unwrap();
        assert_relative_eq!(c, 20.0 / 21.0, epsilon = 1e-12);
        let ar = ar1_model(0.5, 100, 1.0).unwrap().model;
        for phi_s in [1.5, 3.0, 10.0] {
            let a = ap(0.5, phi_s);
            let r1 = asymptotic_risk(0.0, ONE, a, &ar).unwrap().total;
            let ri = asymptotic_risk(0.0, INF, a, &ar).unwrap().total;
            let closed = (phi_s * r1 - (phi_s - 0.5) * ri) / (2.0 * (phi_s - 0.5));
            assert_relative_eq!(inconsistency_gap(a, &ar).unwrap(), closed, epsilon = 1e-12);
            assert!(closed > 0.0);
        }
        assert!(inconsistency_gap(ap(0.5, 1e6), &m).unwrap() < 1e-5);
        assert!(inconsistency_gap(ap(0.5, 2.0), &ModelSpec::isotropic(0.0, 1.0).unwrap()).is_err());
        assert!(inconsistency_gap(ap(0.5, 0.9), &m).is_err());
    }

    #[test]
    fn optimal_lambda_cases() {
        let o = optimal_lambda(0.5, &ModelSpec::isotropic(0.0, 1.0).unwrap()).unwrap();
        assert!(o.argument.is_infinite());
        assert_eq!(o.risk, 1.0);
        let o = optimal_lambda(0.5, &ModelSpec::isotropic(1.0, 0.0).unwrap()).unwrap();
        assert_eq!((o.argument, o.risk), (0.0, 0.0));

        let m = iso();
        let o = optimal_lambda(0.5, &m).unwrap();
        // Isotropic optimum is λ* = φ σ²/ρ².
        assert_relative_eq!(o.argument, 0.5, epsilon = 1e-6);
        let dense = (1..20_000)
            .map(|i| asymptotic_risk(i as f64 * 1e-4, ONE, ap(0.5, 0.5), &m).unwrap().total)
            .fold(f64::INFINITY, f64::min);
        assert!((o.risk - dense).abs() <= 1e-8, "{} vs {dense}", o.risk);
    }

    #[test]
    fn optimal_subsample_cases() {
        let o = optimal_subsample(0.5, &ModelSpec::isotropic(0.0, 1.0).unwrap()).unwrap();
        assert!(o.argument.is_infinite());
        let o = optimal_subsample(0.5, &ModelSpec::isotropic(1.0, 0.0).unwrap()).unwrap();
        assert_eq!((o.argument, o.risk), (0.5, 0.0));
        let m = iso();
        let s = optimal_subsample(0.5, &m).unwrap();
        let l = optimal_lambda(0.5, &m).unwrap();
        assert!((s.risk - l.risk).abs() <= 1e-6);
    }

    #[test]
    fn joint_matches_marginals() {
        let m = ar1_model(0.5, 100, 1.0).unwrap().model;
        for phi in [0.1, 2.0] {
            let j = optimal_joint(phi, &m).unwrap();
            let l = optimal_lambda(phi, &m).unwrap();
            assert!((j.risk - l.risk).abs() <= 1e-6, "phi {phi}: {} vs {}", j.risk, l.risk);
        }
    }

    #[test]
    fn contour() {
        let h = SpectralMeasure::point_mass(1.0).unwrap();
        assert_relative_eq!(contour_lambda_for_phis(2.0, 0.5, &h).unwrap(), 0.75, epsilon = 1e-12);
        assert_relative_eq!(solve_v(0.75, 0.5, &h).unwrap().v, 1.0, epsilon = 1e-12);
        assert_eq!(contour_lambda_for_phis(0.5, 0.5, &h).unwrap(), 0.0);
        assert!(contour_lambda_for_phis(f64::INFINITY, 0.5, &h).unwrap().is_infinite());
        assert!(contour_lambda_for_phis(1.0, 0.5, &h).is_err());

        let p = equivalence_path(0.75, 2.0, 0.5, 0.0).unwrap();
        assert_eq!((p.lambda, p.phi_s), (0.75, 0.5));
        let p = equivalence_path(0.75, 2.0, 0.5, 1.0).unwrap();
        assert_eq!((p.lambda, p.phi_s), (0.0, 2.0));
        let p = equivalence_path(0.75, 2.0, 0.5, 0.5).unwrap();
        assert_eq!((p.lambda, p.phi_s), (0.375, 1.25));
        let r = asymptotic_risk(p.lambda, INF, ap(0.5, p.phi_s), &iso()).unwrap().total;
        assert_relative_eq!(r, 10.0 / 7.0, epsilon = 1e-8);
        assert!(equivalence_path(0.75, 2.0, 0.5, 1.5).is_err());
    }

    #[test]
    fn surface() {
        let m = iso();
        let s = risk_surface(&[0.0], &[2.0], 0.5, INF, &m);
        assert_relative_eq!(s.values[0][0], 10.0 / 7.0, epsilon = 1e-12);
        let s = risk_surface(&[0.0, 0.1], &[0.5, 1.0, 3.0], 0.5, ONE, &m);
        assert_eq!(s.nan_cells(), vec![(0, 1)]);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("lambda\\phi_s,0.5,1,3\n0,"));
        assert!(text.contains("NaN"));
    }

    #[test]
    fn boundary_continuity() {
        let m = ar1_model(0.5, 100, 1.0).unwrap().model;
        for phi_s in [1.5, 3.0] {
            for mm in [ONE, INF] {
                let a = asymptotic_risk(0.0, mm, ap(0.5, phi_s), &m).unwrap().total;
                let b = asymptotic_risk(1e-7, mm, ap(0.5, phi_s), &m).unwrap().total;
                assert!((a - b).abs() <= 1e-4);
            }
        }
    }

    #[test]
    fn ensemble_size_parsing() {
        assert_eq!("inf".parse::<EnsembleSize>().unwrap(), INF);
        assert_eq!("12".parse::<EnsembleSize>().unwrap(), EnsembleSize::Finite(12));
        assert!("0".parse::<EnsembleSize>().is_err());
        assert_eq!(INF.to_string(), "inf");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mixture_identity(lambda in 0.0f64..3.0, phi in 0.05f64..3.0, ratio in 1.0f64..20.0, m in 1usize..50) {
            let model = ar1_model(0.5, 40, 1.0).unwrap().model;
            let a = ap(phi, phi * ratio);
            prop_assume!(!(lambda == 0.0 && (a.phi_s - 1.0).abs() < 1e-3));
            let r1 = asymptotic_risk(lambda, ONE, a, &model).unwrap().total;
            let ri = asymptotic_risk(lambda, INF, a, &model).unwrap().total;
            let rm = asymptotic_risk(lambda, EnsembleSize::Finite(m), a, &model).unwrap().total;
            prop_assert!((rm - (ri + (r1 - ri) / m as f64)).abs() <= 1e-12 * r1.max(1.0));
            prop_assert!(ri <= r1 + 1e-12);
        }

        #[test]
        fn gcv_matches_risk(lambda in 0.0f64..3.0, phi in 0.05f64..3.0, ratio in 1.0f64..20.0) {
            let model = ar1_model(0.5, 40, 1.0).unwrap().model;
            let a = ap(phi, phi * ratio);
            prop_assume!(!(lambda == 0.0 && (a.phi_s - 1.0).abs() < 1e-3));
            let g = gcv_limit(lambda, a, &model).unwrap();
            let r = asymptotic_risk(lambda, INF, a, &model).unwrap().total;
            prop_assert!((g - r).abs() <= 1e-10 * r.max(1.0), "{} vs {}", g, r);
        }

        #[test]
        fn contour_invariance(phi in 0.05f64..3.0, ratio in 1.01f64..10.0) {
            let model = ar1_model(0.5, 40, 1.0).unwrap().model;
            let phi_s_bar = (phi * ratio).max(1.05);
            let lambda_bar = contour_lambda_for_phis(phi_s_bar, phi, &model.h).unwrap();
            let mut values = Vec::new();
            for i in 0..=10 {
                let p = equivalence_path(lambda_bar, phi_s_bar, phi, i as f64 / 10.0).unwrap();
                values.push(asymptotic_risk(p.lambda, INF, ap(phi, p.phi_s), &model).unwrap().total);
            }
            let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - values.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert!(spread < 1e-8, "spread {}", spread);
        }

        #[test]
        fn gap_positive(phi in 0.05f64..3.0, ratio in 1.01f64..50.0) {
            let model = ar1_model(0.5, 40, 1.0).unwrap().model;
            let phi_s = (phi * ratio).max(1.01);
            prop_assert!(inconsistency_gap(ap(phi, phi_s), &model).unwrap() > 0.0);
        }
    }
}
