//! The scalar fixed point `v(-λ; θ)`, the unique nonnegative root of
//!
//! ```text
//! 1/v = λ + θ ∫ r / (1 + v r) dH(r)
//! ```
//!
//! and the constants built from it. `v = +inf` is a legitimate value
//! (ridgeless fits below the interpolation threshold); downstream code reads
//! `ell = λ v` and the rescaled second moment, which stay finite there.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::SpectralMeasure;

/// Residual tolerance on `|1 - λ v - θ ∫ v r / (1 + v r) dH|`.
pub const RESIDUAL_TOL: f64 = 1e-12;
const MAX_ITER: usize = 200;
/// Relative bracket width at which bisection hands over to Newton.
const POLISH_WIDTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointSolution {
    pub lambda: f64,
    pub theta: f64,
    /// May be `+inf`.
    pub v: f64,
    /// `λ v`, continuously extended to `λ = 0`.
    pub ell: f64,
    /// `∫ (v r / (1 + v r))² dH`, equal to 1 when `v = +inf`.
    pub scaled_second_moment: f64,
}

impl FixedPointSolution {
    /// `ṽ(-λ; ϑ, θ) = ϑ A / (v⁻² - ϑ A)` with `A = ∫ r² (1 + v r)⁻² dH`,
    /// evaluated in its `v²`-rescaled form.
    pub fn tilde_v(&self, vartheta: f64) -> Result<f64> {
        if !(vartheta > 0.0) || vartheta > self.theta * (1.0 + 1e-12) {
            return Err(Error::param(format!("vartheta = {vartheta} must lie in (0, theta = {}]", self.theta)));
        }
        let a = vartheta * self.scaled_second_moment;
        let denom = 1.0 - a;
        if !(denom > 0.0) {
            return Err(Error::DivergentVariance { vartheta });
        }
        Ok(a / denom)
    }

    /// `c̃(-λ; θ) = ∫ r (1 + v r)⁻² dG`.
    pub fn tilde_c(&self, g: &SpectralMeasure) -> f64 {
        if self.v.is_infinite() {
            return 0.0;
        }
        let v = self.v;
        g.integrate(|r| r / ((1.0 + v * r) * (1.0 + v * r)))
    }

    /// `∫ r (1 + v r)⁻¹ dH`.
    pub fn resolvent_mean(&self, h: &SpectralMeasure) -> f64 {
        if self.v.is_infinite() {
            return 0.0;
        }
        let v = self.v;
        h.integrate(|r| r / (1.0 + v * r))
    }

    /// `|1 - λ v - θ ∫ v r / (1 + v r) dH|`, zero for the limiting cases.
    pub fn residual(&self, h: &SpectralMeasure) -> f64 {
        if self.v.is_infinite() || self.theta.is_infinite() {
            return 0.0;
        }
        scaled_equation(self.v, self.lambda, self.theta, h).abs()
    }
}

/// `x · (1/x - λ - θ ∫ r/(1+xr) dH)`: equals 1 at 0, strictly decreasing.
fn scaled_equation(x: f64, lambda: f64, theta: f64, h: &SpectralMeasure) -> f64 {
    1.0 - lambda * x - theta * h.integrate(|r| x * r / (1.0 + x * r))
}

fn scaled_equation_slope(x: f64, lambda: f64, theta: f64, h: &SpectralMeasure) -> f64 {
    -lambda - theta * h.integrate(|r| r / ((1.0 + x * r) * (1.0 + x * r)))
}

pub fn solve_v(lambda: f64, theta: f64, h: &SpectralMeasure) -> Result<FixedPointSolution> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param(format!("lambda = {lambda} must be finite and nonnegative")));
    }
    if !(theta > 0.0) {
        return Err(Error::param(format!("theta = {theta} must be positive")));
    }
    if theta.is_infinite() {
        return Ok(FixedPointSolution { lambda, theta, v: 0.0, ell: 0.0, scaled_second_moment: 0.0 });
    }
    if lambda == 0.0 {
        if theta == 1.0 {
            return Err(Error::ExcludedBoundary { theta });
        }
        if theta < 1.0 {
            return Ok(FixedPointSolution {
                lambda,
                theta,
                v: f64::INFINITY,
                ell: 1.0 - theta,
                scaled_second_moment: 1.0,
            });
        }
    }

    // g(x) >= 1 - (λ + θ r_max) x > 0 below `lo`; for θ > 1,
    // g(x) <= 1 - θ x r_min / (1 + x r_min) < 0 above 1 / (r_min (θ - 1)).
    let mut lo = 0.5 / (lambda + theta * h.max_value());
    let mut hi = if lambda > 0.0 { 1.0 / lambda } else { f64::INFINITY };
    if theta > 1.0 {
        hi = hi.min(2.0 / (h.min_value() * (theta - 1.0)));
    }
    let g = |x: f64| scaled_equation(x, lambda, theta, h);

    let mut iter = 0;
    while hi - lo > POLISH_WIDTH * hi {
        if iter == MAX_ITER {
            return Err(Error::NonConvergence { lo, hi });
        }
        iter += 1;
        let mid = if hi > 4.0 * lo { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        let gm = g(mid);
        if gm == 0.0 {
            lo = mid;
            hi = mid;
        } else if gm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    // Safeguarded Newton inside the bracket.
    let mut x = 0.5 * (lo + hi);
    loop {
        let gx = g(x);
        if gx.abs() <= 0.25 * RESIDUAL_TOL || lo == hi {
            break;
        }
        if gx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if iter == MAX_ITER {
            return Err(Error::NonConvergence { lo, hi });
        }
        iter += 1;
        let mut next = x - gx / scaled_equation_slope(x, lambda, theta, h);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if next == x {
            break;
        }
        x = next;
    }
    if g(x).abs() > RESIDUAL_TOL {
        return Err(Error::NonConvergence { lo, hi });
    }
    let v = x;
    let ell = if lambda > 0.0 { lambda * v } else { 0.0 };
    let scaled_second_moment = h.integrate(|r| {
        let t = v * r / (1.0 + v * r);
        t * t
    });
    Ok(FixedPointSolution { lambda, theta, v, ell, scaled_second_moment })
}

/// `ṽ(-λ; ϑ, θ)`.
pub fn tilde_v(lambda: f64, vartheta: f64, theta: f64, h: &SpectralMeasure) -> Result<f64> {
    solve_v(lambda, theta, h)?.tilde_v(vartheta)
}

/// `c̃(-λ; θ)`.
pub fn tilde_c(lambda: f64, theta: f64, h: &SpectralMeasure, g: &SpectralMeasure) -> Result<f64> {
    Ok(solve_v(lambda, theta, h)?.tilde_c(g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use crate::spectra::ar1_model;

    fn iso() -> SpectralMeasure {
        SpectralMeasure::point_mass(1.0).unwrap()
    }

    #[test]
    fn closed_forms() {
        let h = iso();
        assert_relative_eq!(solve_v(0.0, 2.0, &h).unwrap().v, 1.0, epsilon = 1e-12);
        assert_relative_eq!(solve_v(1.0, 1.0, &h).unwrap().v, (5f64.sqrt() - 1.0) / 2.0, epsilon = 1e-12);
        let s = solve_v(0.1, 0.5, &h).unwrap();
        assert_relative_eq!(s.v, (4.0 + 56f64.sqrt()) / 2.0, epsilon = 1e-11);
        assert_relative_eq!(s.ell, 0.1 * s.v, epsilon = 1e-15);
        let s = solve_v(0.0, 0.5, &h).unwrap();
        assert!(s.v.is_infinite());
        assert_eq!(s.ell, 0.5);
        assert_eq!(s.scaled_second_moment, 1.0);
    }

    #[test]
    fn boundary_cases() {
        let h = iso();
        assert!(matches!(solve_v(0.0, 1.0, &h), Err(Error::ExcludedBoundary { .. })));
        let s = solve_v(0.3, f64::INFINITY, &h).unwrap();
        assert_eq!((s.v, s.ell), (0.0, 0.0));
        let s = solve_v(0.0, f64::INFINITY, &h).unwrap();
        assert_eq!(s.v, 0.0);
        assert!(solve_v(-1.0, 2.0, &h).is_err());
        assert!(solve_v(1.0, 0.0, &h).is_err());
    }

    #[test]
    fn tilde_constants() {
        let h = iso();
        assert_relative_eq!(tilde_v(0.0, 2.0, 2.0, &h).unwrap(), 1.0, epsilon = 1e-12);
        // v = 1: A = 1/4, so 0.5 * 0.25 / (1 - 0.125) = 1/7.
        assert_relative_eq!(tilde_v(0.0, 0.5, 2.0, &h).unwrap(), 1.0 / 7.0, epsilon = 1e-12);
        assert_relative_eq!(tilde_v(0.0, 0.5, 0.5, &h).unwrap(), 1.0, epsilon = 1e-15);
        assert!(tilde_v(0.0, 3.0, 2.0, &h).is_err());

        assert_relative_eq!(tilde_c(0.0, 2.0, &h, &h).unwrap(), 0.25, epsilon = 1e-12);
        assert_eq!(tilde_c(0.0, 0.5, &h, &h).unwrap(), 0.0);
        assert_eq!(tilde_c(0.2, f64::INFINITY, &h, &h).unwrap(), 1.0);
    }

    #[test]
    fn divergent_variance_is_reported() {
        // Rescaled form with Â = 1 and ϑ = 1 has a zero denominator.
        let s = FixedPointSolution { lambda: 0.0, theta: 1.0, v: f64::INFINITY, ell: 0.0, scaled_second_moment: 1.0 };
        assert!(matches!(s.tilde_v(1.0), Err(Error::DivergentVariance { .. })));
    }

    #[test]
    fn continuity_at_zero_penalty() {
        let pop = ar1_model(0.5, 100, 1.0).unwrap();
        // Near θ = 1 the slope dv/dλ blows up, so this holds only away from it.
        for theta in [1.5, 2.0, 5.0, 50.0] {
            let v0 = solve_v(0.0, theta, &pop.model.h).unwrap().v;
            let v1 = solve_v(1e-8, theta, &pop.model.h).unwrap().v;
            assert!((v0 - v1).abs() <= 1e-6, "theta {theta}: {v0} vs {v1}");
        }
    }

    #[test]
    fn ell_is_nonincreasing_in_theta_at_zero_penalty() {
        let h = ar1_model(0.5, 50, 1.0).unwrap().model.h;
        let mut last = 1.0;
        for i in 1..60 {
            let theta = 0.05 * i as f64;
            if theta == 1.0 {
                continue;
            }
            let ell = solve_v(0.0, theta, &h).unwrap().ell;
            assert!((0.0..=1.0).contains(&ell));
            assert!(ell <= last + 1e-15);
            last = ell;
        }
    }

    proptest! {
        #[test]
        fn residual_and_range(lambda in 1e-4f64..10.0, theta in 0.05f64..20.0, rho in 0.05f64..0.9) {
            let h = ar1_model(rho, 20, 1.0).unwrap().model.h;
            let s = solve_v(lambda, theta, &h).unwrap();
            prop_assert!(s.residual(&h) <= RESIDUAL_TOL);
            prop_assert!(s.v > 0.0 && s.v < 1.0 / lambda);
            prop_assert!(s.ell >= 0.0 && s.ell <= 1.0);
            prop_assert!(s.scaled_second_moment > 0.0 && s.scaled_second_moment <= 1.0);
        }

        #[test]
        fn strictly_decreasing_in_lambda_and_theta(
            l1 in 1e-3f64..5.0, dl in 1e-3f64..5.0, t1 in 0.1f64..10.0, dt in 0.01f64..10.0,
        ) {
            let h = ar1_model(0.5, 20, 1.0).unwrap().model.h;
            let a = solve_v(l1, t1, &h).unwrap().v;
            prop_assert!(solve_v(l1 + dl, t1, &h).unwrap().v < a);
            prop_assert!(solve_v(l1, t1 + dt, &h).unwrap().v < a);
        }

        #[test]
        fn ridgeless_overparameterized_residual(theta in 1.01f64..50.0) {
            let h = ar1_model(0.3, 30, 1.0).unwrap().model.h;
            let s = solve_v(0.0, theta, &h).unwrap();
            prop_assert!(s.v.is_finite());
            prop_assert!(s.residual(&h) <= RESIDUAL_TOL);
            prop_assert_eq!(s.ell, 0.0);
        }
    }
}
