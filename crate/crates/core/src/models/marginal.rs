//! The marginal density r(x) = ∫ π(θ) f(x | θ) dθ and its truncation box.

use std::f64::consts::PI;

use nalgebra::DVector;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erf;

use super::family::ExponentialFamilyModel;
use super::prior::PriorSpec;
use crate::error::{Error, Result};
use crate::quadrature::{self, PolygonQuadrature};

/// Default probability mass allowed outside the truncation box.
pub const DEFAULT_EPS_TRUNC: f64 = 1e-6;

#[derive(Debug, Clone)]
enum Rule {
    /// N(mean, var·I): isotropic Gaussian family with a Gaussian prior.
    Gaussian { mean: Vec<f64>, var: f64 },
    /// Σₖ cₖ exp(x·θₖ − ψ(θₖ)) h(x) over the prior's Simpson nodes.
    Mixture { thetas: Vec<Vec<f64>>, log_coeffs: Vec<f64> },
}

/// Marginal density of the data together with the truncation box B used for
/// all integrals.
#[derive(Debug, Clone)]
pub struct MarginalDensity {
    model: ExponentialFamilyModel,
    prior: PriorSpec,
    rule: Rule,
    lo: Vec<f64>,
    hi: Vec<f64>,
    mass: f64,
    mean: DVector<f64>,
    eps_trunc: f64,
}

impl MarginalDensity {
    pub fn new(model: &ExponentialFamilyModel, prior: &PriorSpec, eps_trunc: f64) -> Result<Self> {
        let d = model.dimension();
        if prior.dimension() != d {
            return Err(Error::param(
                "prior",
                format!("prior dimension {} does not match model dimension {d}", prior.dimension()),
            ));
        }
        if !(eps_trunc > 0.0 && eps_trunc < 0.5) {
            return Err(Error::param("truncation_epsilon", "must lie in (0, 0.5)"));
        }
        match prior {
            PriorSpec::Gaussian { mean, scale } => {
                if !model.natural_domain().is_whole() {
                    return Err(Error::param(
                        "prior.kind",
                        "a Gaussian prior needs Θ = ℝᵈ; use a tabulated prior for this family",
                    ));
                }
                if model.is_gaussian() {
                    Ok(Self::gaussian_closed_form(model, prior, mean, *scale, eps_trunc))
                } else {
                    // Tabulate the Gaussian prior over ±8 scales and fall through to the mixture rule.
                    let lo: Vec<f64> = mean.iter().map(|m| m - 8.0 * scale).collect();
                    let hi: Vec<f64> = mean.iter().map(|m| m + 8.0 * scale).collect();
                    let pts = vec![if d == 1 { 401 } else { 41 }; d];
                    let tab = super::prior::TabulatedPrior::from_fn(lo, hi, pts, |t| prior.density(t))?;
                    Self::mixture(model, prior, &tab, eps_trunc)
                }
            }
            PriorSpec::Tabulated(tab) => {
                let dom = model.natural_domain();
                for (th, w) in tab.nodes() {
                    if w > 0.0 && !dom.contains_open(&th) {
                        return Err(Error::param(
                            "prior",
                            format!("tabulated prior puts mass at θ = {th:?} outside Θ"),
                        ));
                    }
                }
                Self::mixture(model, prior, tab, eps_trunc)
            }
        }
    }

    fn gaussian_closed_form(model: &ExponentialFamilyModel, prior: &PriorSpec, mean: &[f64], scale: f64, eps: f64) -> Self {
        let d = mean.len();
        let var = 1.0 + scale * scale;
        let sd = var.sqrt();
        let per_axis = (1.0 - eps).powf(1.0 / d as f64);
        let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
        let mut k = std_normal.inverse_cdf(0.5 * (1.0 + per_axis));
        // inverse_cdf is accurate to ~1e-15 relative; nudge until the mass bound holds.
        let mass_at = |k: f64| erf(k / std::f64::consts::SQRT_2).powi(d as i32);
        while mass_at(k) < 1.0 - eps {
            k *= 1.0 + 1e-9;
        }
        let lo = mean.iter().map(|m| m - k * sd).collect();
        let hi = mean.iter().map(|m| m + k * sd).collect();
        MarginalDensity {
            model: model.clone(),
            prior: prior.clone(),
            rule: Rule::Gaussian {
                mean: mean.to_vec(),
                var,
            },
            lo,
            hi,
            mass: mass_at(k),
            mean: DVector::from_column_slice(mean),
            eps_trunc: eps,
        }
    }

    fn mixture(
        model: &ExponentialFamilyModel,
        prior: &PriorSpec,
        tab: &super::prior::TabulatedPrior,
        eps: f64,
    ) -> Result<Self> {
        let d = model.dimension();
        let fam = model.family();
        let mut thetas = Vec::new();
        let mut log_coeffs = Vec::new();
        let mut mean: DVector<f64> = DVector::zeros(d);
        let mut second: DVector<f64> = DVector::zeros(d);
        for (th, w) in tab.nodes() {
            if w <= 0.0 {
                continue;
            }
            let mu = fam.grad_psi(&th);
            let var = fam.hess_psi(&th);
            for k in 0..d {
                mean[k] += w * mu[k];
                second[k] += w * (var[(k, k)] + mu[k] * mu[k]);
            }
            log_coeffs.push(w.ln() - fam.psi(&th));
            thetas.push(th);
        }
        let sd: Vec<f64> = (0..d).map(|k| (second[k] - mean[k] * mean[k]).max(1e-300).sqrt()).collect();
        let support = model.support();
        let mut out = MarginalDensity {
            model: model.clone(),
            prior: prior.clone(),
            rule: Rule::Mixture { thetas, log_coeffs },
            lo: vec![0.0; d],
            hi: vec![0.0; d],
            mass: 0.0,
            mean,
            eps_trunc: eps,
        };
        let mut k = 4.0;
        for _ in 0..40 {
            for a in 0..d {
                out.lo[a] = (out.mean[a] - k * sd[a]).max(support.lo[a]);
                out.hi[a] = (out.mean[a] + k * sd[a]).min(support.hi[a]);
            }
            let (mass, err, unresolved) = out.box_mass_by_quadrature();
            if unresolved && err > 0.1 * eps {
                return Err(Error::Integration {
                    achieved: err,
                    tolerance: 0.1 * eps,
                });
            }
            if mass >= 1.0 - eps {
                out.mass = mass.min(1.0);
                return Ok(out);
            }
            k *= 1.5;
        }
        Err(Error::Integration {
            achieved: 1.0 - out.mass,
            tolerance: eps,
        })
    }

    fn box_mass_by_quadrature(&self) -> (f64, f64, bool) {
        let d = self.dimension();
        let tol = 1e-3 * self.eps_trunc;
        match d {
            1 => {
                let e = quadrature::integrate_interval(|x| [self.eval(&[x])], self.lo[0], self.hi[0], tol);
                (e.value[0], e.error, e.unresolved)
            }
            2 => {
                let opts = PolygonQuadrature::new([self.lo[0], self.lo[1]], [self.hi[0], self.hi[1]], tol);
                let rect = [
                    [self.lo[0], self.lo[1]],
                    [self.hi[0], self.lo[1]],
                    [self.hi[0], self.hi[1]],
                    [self.lo[0], self.hi[1]],
                ];
                let e = quadrature::integrate_polygon(&rect, &|p: [f64; 2]| [self.eval(&p)], &opts);
                (e.value[0], e.error, e.unresolved)
            }
            _ => {
                let mut m = 0.0;
                quadrature::for_each_midpoint(&self.lo, &self.hi, 32, |x, v| m += v * self.eval(x));
                (m, 0.0, false)
            }
        }
    }

    pub fn model(&self) -> &ExponentialFamilyModel {
        &self.model
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn dimension(&self) -> usize {
        self.lo.len()
    }

    pub fn box_lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn box_hi(&self) -> &[f64] {
        &self.hi
    }

    /// m_B = ∫_B r dx.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn eps_trunc(&self) -> f64 {
        self.eps_trunc
    }

    /// E_r[X] over the whole support.
    pub fn moment(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn is_closed_form(&self) -> bool {
        matches!(self.rule, Rule::Gaussian { .. })
    }

    /// r(x). The caller guarantees x lies in the support.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.rule {
            Rule::Gaussian { mean, var } => {
                let q: f64 = x.iter().zip(mean).map(|(a, m)| (a - m) * (a - m)).sum();
                (-0.5 * q / var).exp() / (2.0 * PI * var).powf(0.5 * x.len() as f64)
            }
            Rule::Mixture { thetas, log_coeffs } => {
                let lh = self.model.family().log_h(x);
                thetas
                    .iter()
                    .zip(log_coeffs)
                    .map(|(th, c)| {
                        let dot: f64 = x.iter().zip(th).map(|(a, b)| a * b).sum();
                        (dot + c + lh).exp()
                    })
                    .sum()
            }
        }
    }

    /// r(x) with a check that x lies in the truncation box.
    pub fn eval_checked(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dimension()
            || x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .any(|(v, (lo, hi))| !(*v >= *lo && *v <= *hi))
        {
            return Err(Error::Domain(format!("x = {x:?} outside the truncation box")));
        }
        Ok(self.eval(x))
    }

    /// r(x)/m_B: the density renormalized on B. All cell integrals use this.
    pub fn truncated(&self, x: &[f64]) -> f64 {
        self.eval(x) / self.mass
    }

    /// ∇r(x): analytic for the closed-form Gaussian, central differences otherwise.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match &self.rule {
            Rule::Gaussian { mean, var } => {
                let r = self.eval(x);
                x.iter().zip(mean).map(|(a, m)| -(a - m) / var * r).collect()
            }
            Rule::Mixture { .. } => {
                let support = self.model.support();
                (0..x.len())
                    .map(|k| {
                        let h = 1e-5 * x[k].abs().max(1.0);
                        let mut p = x.to_vec();
                        let mut m = x.to_vec();
                        p[k] += h;
                        m[k] -= h;
                        if m[k] < support.lo[k] {
                            // one-sided at the support boundary
                            m[k] = x[k];
                            return (self.eval(&p) - self.eval(&m)) / h;
                        }
                        (self.eval(&p) - self.eval(&m)) / (2.0 * h)
                    })
                    .collect()
            }
        }
    }
}
