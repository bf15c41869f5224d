//! Browser bindings for the risk theory: a risk heat map over
//! `(λ, φs)`, risk and GCV curves along `φs`, and the optimal
//! equivalence segment. Arrays are returned flat; layouts are documented
//! on each method.

use wasm_bindgen::prelude::*;

use subridge::spectra::{ar1_model, ModelSpec};
use subridge::theory::{
    asymptotic_risk, equivalence_path, gcv_limit, gcv_limit_finite_m, optimal_lambda, optimal_subsample, AspectPair,
    EnsembleSize,
};

#[wasm_bindgen]
pub struct Demo {
    model: ModelSpec,
}

fn linspace(lo: f64, hi: f64, count: usize) -> impl Iterator<Item = f64> {
    let step = if count > 1 { (hi - lo) / (count - 1) as f64 } else { 0.0 };
    (0..count).map(move |i| lo + step * i as f64)
}

fn ensemble_size(m: u32) -> EnsembleSize {
    if m == 0 {
        EnsembleSize::Infinite
    } else {
        EnsembleSize::Finite(m as usize)
    }
}

#[wasm_bindgen]
impl Demo {
    /// `kind` is `"ar1"` (uses `rho_ar1` and `p_ref`) or `"isotropic"`
    /// (signal energy `rho2`).
    #[wasm_bindgen(constructor)]
    pub fn new(kind: &str, rho_ar1: f64, p_ref: usize, rho2: f64, sigma2: f64) -> Result<Demo, String> {
        let model = match kind {
            "ar1" => ar1_model(rho_ar1, p_ref, sigma2).map(|p| p.model),
            "isotropic" => ModelSpec::isotropic(rho2, sigma2),
            other => return Err(format!("unknown model '{other}'")),
        }
        .map_err(|e| e.to_string())?;
        Ok(Demo { model })
    }

    pub fn null_risk(&self) -> f64 {
        self.model.null_risk()
    }

    /// Row-major `n_lambda x n_phi_s` risks for `λ ∈ [0, lambda_max]` and
    /// `φs ∈ [φ, phi_s_max]`; `m = 0` means `M = ∞`. Undefined cells are NaN.
    pub fn risk_surface(
        &self,
        phi: f64,
        lambda_max: f64,
        phi_s_max: f64,
        n_lambda: usize,
        n_phi_s: usize,
        m: u32,
    ) -> Vec<f64> {
        let m = ensemble_size(m);
        let phis: Vec<f64> = linspace(phi, phi_s_max, n_phi_s).collect();
        linspace(0.0, lambda_max, n_lambda)
            .flat_map(|lambda| {
                phis.iter()
                    .map(|&s| {
                        AspectPair::new(phi, s)
                            .and_then(|a| asymptotic_risk(lambda, m, a, &self.model))
                            .map_or(f64::NAN, |r| r.total)
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Six rows of `count` values over `φs ∈ [φ, phi_s_max]`: the grid,
    /// risk at `M = 1, 10, ∞`, the `M = ∞` GCV limit and the `M = 2` GCV
    /// limit.
    pub fn curves(&self, phi: f64, lambda: f64, phi_s_max: f64, count: usize) -> Vec<f64> {
        let grid: Vec<f64> = linspace(phi, phi_s_max, count).collect();
        let risk = |m: EnsembleSize| -> Vec<f64> {
            grid.iter()
                .map(|&s| {
                    AspectPair::new(phi, s)
                        .and_then(|a| asymptotic_risk(lambda, m, a, &self.model))
                        .map_or(f64::NAN, |r| r.total)
                })
                .collect()
        };
        let gcv_inf = grid
            .iter()
            .map(|&s| AspectPair::new(phi, s).and_then(|a| gcv_limit(lambda, a, &self.model)).unwrap_or(f64::NAN));
        let gcv_two = grid.iter().map(|&s| {
            AspectPair::new(phi, s).and_then(|a| gcv_limit_finite_m(lambda, 2, a, &self.model)).unwrap_or(f64::NAN)
        });
        let mut out = grid.clone();
        out.extend(risk(EnsembleSize::Finite(1)));
        out.extend(risk(EnsembleSize::Finite(10)));
        out.extend(risk(EnsembleSize::Infinite));
        out.extend(gcv_inf);
        out.extend(gcv_two);
        out
    }

    /// `[λ*, φs*, R*]`, the optimal ridge penalty on full data, the optimal
    /// ridgeless subsample ratio and the shared minimum risk. Infinite
    /// arguments mean the null predictor is optimal.
    pub fn optimum(&self, phi: f64) -> Vec<f64> {
        match (optimal_lambda(phi, &self.model), optimal_subsample(phi, &self.model)) {
            (Ok(l), Ok(s)) => vec![l.argument, s.argument, l.risk.min(s.risk)],
            _ => vec![f64::NAN; 3],
        }
    }

    /// `count` points `[λ, φs, risk]` along the segment from `(λ*, φ)` to
    /// `(0, φs*)`; empty when either optimum is infinite.
    pub fn equivalence_segment(&self, phi: f64, count: usize) -> Vec<f64> {
        let opt = self.optimum(phi);
        let (lambda_star, phi_s_star) = (opt[0], opt[1]);
        if !(lambda_star.is_finite() && phi_s_star.is_finite()) || count < 2 {
            return Vec::new();
        }
        linspace(0.0, 1.0, count)
            .filter_map(|theta| equivalence_path(lambda_star, phi_s_star, phi, theta).ok())
            .flat_map(|pt| {
                let r = AspectPair::new(phi, pt.phi_s)
                    .and_then(|a| asymptotic_risk(pt.lambda, EnsembleSize::Infinite, a, &self.model))
                    .map_or(f64::NAN, |r| r.total);
                [pt.lambda, pt.phi_s, r]
            })
            .collect()
    }
}
