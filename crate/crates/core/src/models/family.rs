//! Exponential families `f(x | θ) = exp(x·θ − ψ(θ)) h(x)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An axis-aligned (possibly unbounded) box, or all of ℝᵈ when every bound is infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Domain {
    pub fn whole(d: usize) -> Self {
        Domain {
            lo: vec![f64::NEG_INFINITY; d],
            hi: vec![f64::INFINITY; d],
        }
    }

    pub fn is_whole(&self) -> bool {
        self.lo.iter().all(|v| v.is_infinite()) && self.hi.iter().all(|v| v.is_infinite())
    }

    /// Strict membership; used for natural parameters (Θ is open).
    pub fn contains_open(&self, p: &[f64]) -> bool {
        p.len() == self.lo.len()
            && p.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (lo, hi))| v.is_finite() && *v > *lo && *v < *hi)
    }

    /// Membership in the closure; used for data points on truncation boxes.
    pub fn contains_closed(&self, p: &[f64]) -> bool {
        p.len() == self.lo.len()
            && p.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (lo, hi))| v.is_finite() && *v >= *lo && *v <= *hi)
    }
}

/// The analytic ingredients of an exponential family. Implementations do no
/// domain checking; [`ExponentialFamilyModel`] does.
pub trait ExponentialFamily: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    /// Support 𝒳 of the data.
    fn support(&self) -> Domain;
    /// Natural parameter space Θ (convex, open).
    fn natural_domain(&self) -> Domain;
    fn psi(&self, theta: &[f64]) -> f64;
    fn grad_psi(&self, theta: &[f64]) -> DVector<f64>;
    fn hess_psi(&self, theta: &[f64]) -> DMatrix<f64>;
    fn log_h(&self, x: &[f64]) -> f64;

    /// Starting point for inverting the mean map.
    fn natural_guess(&self, _mean: &[f64]) -> Vec<f64> {
        let dom = self.natural_domain();
        (0..self.dimension())
            .map(|k| match (dom.lo[k].is_finite(), dom.hi[k].is_finite()) {
                (true, true) => 0.5 * (dom.lo[k] + dom.hi[k]),
                (true, false) => dom.lo[k] + 1.0,
                (false, true) => dom.hi[k] - 1.0,
                (false, false) => 0.0,
            })
            .collect()
    }

    /// Closed form of `θ·m − ψ(θ)` at `θ = μ⁻¹(m)`, when one is known.
    fn conjugate(&self, _mean: &[f64]) -> Option<f64> {
        None
    }

    /// Closed form of μ⁻¹, when one is known.
    fn mean_to_natural(&self, _mean: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Isotropic Gaussian with identity covariance and unknown mean, any d.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IsotropicGaussian {
    pub dim: usize,
}

impl ExponentialFamily for IsotropicGaussian {
    fn name(&self) -> &str {
        "isotropic-gaussian"
    }
    fn dimension(&self) -> usize {
        self.dim
    }
    fn support(&self) -> Domain {
        Domain::whole(self.dim)
    }
    fn natural_domain(&self) -> Domain {
        Domain::whole(self.dim)
    }
    fn psi(&self, theta: &[f64]) -> f64 {
        0.5 * theta.iter().map(|t| t * t).sum::<f64>()
    }
    fn grad_psi(&self, theta: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(theta)
    }
    fn hess_psi(&self, _theta: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim)
    }
    fn log_h(&self, x: &[f64]) -> f64 {
        -0.5 * x.iter().map(|v| v * v).sum::<f64>() - 0.5 * self.dim as f64 * (2.0 * PI).ln()
    }
    fn natural_guess(&self, mean: &[f64]) -> Vec<f64> {
        mean.to_vec()
    }
    fn conjugate(&self, mean: &[f64]) -> Option<f64> {
        Some(0.5 * mean.iter().map(|m| m * m).sum::<f64>())
    }
    fn mean_to_natural(&self, mean: &[f64]) -> Option<Vec<f64>> {
        Some(mean.to_vec())
    }
}

/// Exponential distribution on x > 0 with natural parameter θ = −rate < 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExponentialRate;

impl ExponentialFamily for ExponentialRate {
    fn name(&self) -> &str {
        "exponential-rate"
    }
    fn dimension(&self) -> usize {
        1
    }
    fn support(&self) -> Domain {
        Domain {
            lo: vec![0.0],
            hi: vec![f64::INFINITY],
        }
    }
    fn natural_domain(&self) -> Domain {
        Domain {
            lo: vec![f64::NEG_INFINITY],
            hi: vec![0.0],
        }
    }
    fn psi(&self, theta: &[f64]) -> f64 {
        -(-theta[0]).ln()
    }
    fn grad_psi(&self, theta: &[f64]) -> DVector<f64> {
        DVector::from_element(1, -1.0 / theta[0])
    }
    fn hess_psi(&self, theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0 / (theta[0] * theta[0]))
    }
    fn log_h(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn natural_guess(&self, mean: &[f64]) -> Vec<f64> {
        if mean[0] > 0.0 {
            vec![-1.0 / mean[0]]
        } else {
            vec![-1.0]
        }
    }
    fn conjugate(&self, mean: &[f64]) -> Option<f64> {
        (mean[0] > 0.0).then(|| -1.0 - mean[0].ln())
    }
}

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&[f64]) -> DVector<f64> + Send + Sync;
type MatrixFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// A user-supplied family given by callbacks. Register it through
/// [`FamilyRegistry::register`], which validates the callbacks against each
/// other by finite differences.
#[derive(Clone)]
pub struct CustomFamily {
    pub name: String,
    pub dim: usize,
    pub support: Domain,
    pub natural_domain: Domain,
    pub psi: Arc<ScalarFn>,
    pub grad_psi: Arc<VectorFn>,
    pub hess_psi: Arc<MatrixFn>,
    pub log_h: Arc<ScalarFn>,
}

impl fmt::Debug for CustomFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomFamily")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl ExponentialFamily for CustomFamily {
    fn name(&self) -> &str {
        &self.name
    }
    fn dimension(&self) -> usize {
        self.dim
    }
    fn support(&self) -> Domain {
        self.support.clone()
    }
    fn natural_domain(&self) -> Domain {
        self.natural_domain.clone()
    }
    fn psi(&self, theta: &[f64]) -> f64 {
        (self.psi)(theta)
    }
    fn grad_psi(&self, theta: &[f64]) -> DVector<f64> {
        (self.grad_psi)(theta)
    }
    fn hess_psi(&self, theta: &[f64]) -> DMatrix<f64> {
        (self.hess_psi)(theta)
    }
    fn log_h(&self, x: &[f64]) -> f64 {
        (self.log_h)(x)
    }
}

/// Tag used to serialize a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family", deny_unknown_fields)]
pub enum FamilyKind {
    IsotropicGaussian { dimension: usize },
    ExponentialRate,
    Custom { name: String, dimension: usize },
}

/// An exponential family together with domain-checked evaluation and the
/// inverse mean map.
#[derive(Clone)]
pub struct ExponentialFamilyModel {
    family: Arc<dyn ExponentialFamily>,
    kind: FamilyKind,
}

impl fmt::Debug for ExponentialFamilyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExponentialFamilyModel({:?})", self.kind)
    }
}

impl ExponentialFamilyModel {
    pub fn isotropic_gaussian(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dimension", "must be positive"));
        }
        Ok(ExponentialFamilyModel {
            family: Arc::new(IsotropicGaussian { dim }),
            kind: FamilyKind::IsotropicGaussian { dimension: dim },
        })
    }

    pub fn exponential_rate() -> Self {
        ExponentialFamilyModel {
            family: Arc::new(ExponentialRate),
            kind: FamilyKind::ExponentialRate,
        }
    }

    pub fn from_kind(kind: &FamilyKind, registry: Option<&FamilyRegistry>) -> Result<Self> {
        match kind {
            FamilyKind::IsotropicGaussian { dimension } => Self::isotropic_gaussian(*dimension),
            FamilyKind::ExponentialRate => Ok(Self::exponential_rate()),
            FamilyKind::Custom { name, .. } => registry
                .and_then(|r| r.get(name))
                .ok_or_else(|| Error::param("family", format!("no registered family named `{name}`"))),
        }
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    pub fn family(&self) -> &dyn ExponentialFamily {
        self.family.as_ref()
    }

    pub fn dimension(&self) -> usize {
        self.family.dimension()
    }

    pub fn support(&self) -> Domain {
        self.family.support()
    }

    pub fn natural_domain(&self) -> Domain {
        self.family.natural_domain()
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.kind, FamilyKind::IsotropicGaussian { .. })
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dimension() {
            return Err(Error::Domain(format!(
                "θ has dimension {}, model has {}",
                theta.len(),
                self.dimension()
            )));
        }
        if !self.natural_domain().contains_open(theta) {
            return Err(Error::Domain(format!("θ = {theta:?} outside the natural parameter space")));
        }
        Ok(())
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension() || !self.support().contains_closed(x) {
            return Err(Error::Domain(format!("x = {x:?} outside the support")));
        }
        Ok(())
    }

    /// Log-partition function ψ(θ).
    pub fn psi(&self, theta: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(self.family.psi(theta))
    }

    /// Mean map μ(θ) = ∇ψ(θ).
    pub fn grad_psi(&self, theta: &[f64]) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        Ok(self.family.grad_psi(theta))
    }

    /// Covariance Hess ψ(θ).
    pub fn hess_psi(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        Ok(self.family.hess_psi(theta))
    }

    pub fn log_h(&self, x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        Ok(self.family.log_h(x))
    }

    /// Density f(x | θ).
    pub fn density(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        self.check_theta(theta)?;
        Ok(self.density_unchecked(x, theta))
    }

    pub(crate) fn density_unchecked(&self, x: &[f64], theta: &[f64]) -> f64 {
        let dot: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
        (dot - self.family.psi(theta) + self.family.log_h(x)).exp()
    }

    /// Inverse of the mean map by damped Newton iteration with Hess ψ as the
    /// Jacobian.
    pub fn mu_inverse(&self, mean: &[f64]) -> Result<DVector<f64>> {
        let d = self.dimension();
        if mean.len() != d || mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::MeanOutsideImage(format!("{mean:?}")));
        }
        if let Some(theta) = self.family.mean_to_natural(mean) {
            return Ok(DVector::from_vec(theta));
        }
        let target = DVector::from_column_slice(mean);
        let tol = 1e-10 * (1.0 + target.norm());
        let domain = self.natural_domain();
        let mut theta = DVector::from_vec(self.family.natural_guess(mean));
        if !domain.contains_open(theta.as_slice()) {
            return Err(Error::MeanOutsideImage(format!("{mean:?}: no admissible starting point")));
        }
        let mut resid = &target - self.family.grad_psi(theta.as_slice());
        for _ in 0..100 {
            let rn = resid.norm();
            if rn <= tol {
                return Ok(theta);
            }
            let q = self.family.hess_psi(theta.as_slice());
            let step = match q.cholesky() {
                Some(ch) => ch.solve(&resid),
                None => return Err(Error::MeanOutsideImage(format!("{mean:?}: Hessian not positive definite"))),
            };
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand = &theta + alpha * &step;
                if domain.contains_open(cand.as_slice()) {
                    let r = &target - self.family.grad_psi(cand.as_slice());
                    if r.norm() < rn {
                        theta = cand;
                        resid = r;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if resid.norm() <= tol {
            Ok(theta)
        } else {
            Err(Error::MeanOutsideImage(format!(
                "{mean:?}: Newton iteration did not converge (residual {:e})",
                resid.norm()
            )))
        }
    }

    /// `θ·m − ψ(θ)` at `θ = μ⁻¹(m)`: the per-cell term of the code length.
    pub fn conjugate(&self, mean: &[f64]) -> Result<f64> {
        if let Some(v) = self.family.conjugate(mean) {
            return Ok(v);
        }
        let theta = self.mu_inverse(mean)?;
        let dot: f64 = theta.iter().zip(mean).map(|(a, b)| a * b).sum();
        Ok(dot - self.family.psi(theta.as_slice()))
    }
}

/// Thresholds for [`check_family_consistency`].
pub const GRAD_FD_TOLERANCE: f64 = 1e-6;
pub const HESS_FD_TOLERANCE: f64 = 1e-5;
pub const FD_RELATIVE_STEP: f64 = 1e-4;

/// Worst discrepancies found by [`check_family_consistency`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConsistencyReport {
    pub grad_error: f64,
    pub hess_error: f64,
    pub min_eigenvalue: f64,
    pub asymmetry: f64,
}

/// Central-difference comparison of ∇ψ against ψ and Hess ψ against ∇ψ at
/// each probe point, plus positive-definiteness of the Hessian.
pub fn check_family_consistency(family: &dyn ExponentialFamily, probes: &[Vec<f64>]) -> Result<ConsistencyReport> {
    let mut rep = ConsistencyReport {
        min_eigenvalue: f64::INFINITY,
        ..Default::default()
    };
    let d = family.dimension();
    for theta in probes {
        let g = family.grad_psi(theta);
        let hm = family.hess_psi(theta);
        let mut fd_g = DVector::zeros(d);
        let mut fd_h = DMatrix::zeros(d, d);
        for k in 0..d {
            let h = FD_RELATIVE_STEP * theta[k].abs().max(1.0);
            let mut p = theta.clone();
            let mut m = theta.clone();
            p[k] += h;
            m[k] -= h;
            fd_g[k] = (family.psi(&p) - family.psi(&m)) / (2.0 * h);
            let col = (family.grad_psi(&p) - family.grad_psi(&m)) / (2.0 * h);
            fd_h.set_column(k, &col);
        }
        let ge = (&g - &fd_g).amax() / (1.0 + g.amax());
        let he = (&hm - &fd_h).amax() / (1.0 + hm.amax());
        let asym = (&hm - hm.transpose()).amax();
        let eig = hm.clone().symmetric_eigen().eigenvalues.min();
        rep.grad_error = rep.grad_error.max(ge);
        rep.hess_error = rep.hess_error.max(he);
        rep.asymmetry = rep.asymmetry.max(asym);
        rep.min_eigenvalue = rep.min_eigenvalue.min(eig);
    }
    Ok(rep)
}

/// Named user-supplied families. Registration validates the callbacks.
#[derive(Default, Clone)]
pub struct FamilyRegistry {
    families: BTreeMap<String, ExponentialFamilyModel>,
}

impl FamilyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Validates `family` at `probes` (points of Θ) and registers it.
    pub fn register(&mut self, family: CustomFamily, probes: &[Vec<f64>]) -> Result<()> {
        let name = family.name.clone();
        let fail = |reason: String| Error::InconsistentFamily {
            name: name.clone(),
            reason,
        };
        if family.dim == 0 || family.support.lo.len() != family.dim || family.natural_domain.lo.len() != family.dim {
            return Err(fail("dimension mismatch".into()));
        }
        if probes.is_empty() {
            return Err(fail("at least one probe point is required".into()));
        }
        for p in probes {
            if !family.natural_domain.contains_open(p) {
                return Err(fail(format!("probe {p:?} outside the natural parameter space")));
            }
            if !family.psi(p).is_finite() {
                return Err(fail(format!("ψ not finite at {p:?}")));
            }
        }
        let rep = check_family_consistency(&family, probes)?;
        if rep.grad_error > GRAD_FD_TOLERANCE {
            return Err(fail(format!("∇ψ disagrees with ψ by {:e}", rep.grad_error)));
        }
        if rep.hess_error > HESS_FD_TOLERANCE || rep.asymmetry > HESS_FD_TOLERANCE {
            return Err(fail(format!("Hess ψ disagrees with ∇ψ by {:e}", rep.hess_error)));
        }
        if rep.min_eigenvalue <= 0.0 {
            return Err(fail("Hess ψ is not positive definite".into()));
        }
        let kind = FamilyKind::Custom {
            name: name.clone(),
            dimension: family.dim,
        };
        self.families.insert(
            name,
            ExponentialFamilyModel {
                family: Arc::new(family),
                kind,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<ExponentialFamilyModel> {
        self.families.get(name).cloned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_psi_values() {
        let m = ExponentialFamilyModel::isotropic_gaussian(2).unwrap();
        assert_eq!(m.psi(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(m.psi(&[3.0, 4.0]).unwrap(), 12.5);
        assert_eq!(m.grad_psi(&[1.0, -1.0]).unwrap().as_slice(), &[1.0, -1.0]);
        assert_eq!(m.hess_psi(&[0.3, 9.0]).unwrap(), DMatrix::identity(2, 2));
        let m3 = ExponentialFamilyModel::isotropic_gaussian(3).unwrap();
        assert_eq!(m3.grad_psi(&[0.0; 3]).unwrap().as_slice(), &[0.0; 3]);
        let m1 = ExponentialFamilyModel::isotropic_gaussian(1).unwrap();
        assert_eq!(m1.hess_psi(&[5.0]).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn gaussian_log_h() {
        let m = ExponentialFamilyModel::isotropic_gaussian(2).unwrap();
        assert_relative_eq!(m.log_h(&[0.0, 0.0]).unwrap(), -(2.0 * PI).ln(), epsilon = 1e-15);
        let m1 = ExponentialFamilyModel::isotropic_gaussian(1).unwrap();
        assert_relative_eq!(m1.log_h(&[2.0]).unwrap(), -2.0 - 0.5 * (2.0 * PI).ln(), epsilon = 1e-15);
    }

    #[test]
    fn exponential_rate_values() {
        let m = ExponentialFamilyModel::exponential_rate();
        assert_relative_eq!(m.psi(&[-2.0]).unwrap(), -(2.0f64).ln(), epsilon = 1e-15);
        assert_relative_eq!(m.grad_psi(&[-2.0]).unwrap()[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(m.hess_psi(&[-2.0]).unwrap()[(0, 0)], 0.25, epsilon = 1e-15);
        assert_eq!(m.log_h(&[1.0]).unwrap(), 0.0);
        let th = m.mu_inverse(&[0.5]).unwrap();
        assert!((th[0] + 2.0).abs() < 1e-10);
    }

    #[test]
    fn domain_errors() {
        let m = ExponentialFamilyModel::exponential_rate();
        assert!(matches!(m.psi(&[0.5]), Err(Error::Domain(_))));
        assert!(matches!(m.log_h(&[-1.0]), Err(Error::Domain(_))));
        assert!(matches!(m.mu_inverse(&[-1.0]), Err(Error::MeanOutsideImage(_))));
        let g = ExponentialFamilyModel::isotropic_gaussian(2).unwrap();
        assert!(matches!(g.psi(&[0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn gaussian_mu_inverse_identity() {
        let m = ExponentialFamilyModel::isotropic_gaussian(2).unwrap();
        assert_eq!(m.mu_inverse(&[0.3, -0.7]).unwrap().as_slice(), &[0.3, -0.7]);
        let m1 = ExponentialFamilyModel::isotropic_gaussian(1).unwrap();
        assert_eq!(m1.mu_inverse(&[0.0]).unwrap()[0], 0.0);
    }

    fn quartic_family(broken: bool) -> CustomFamily {
        // ψ(θ) = θ²/2 + θ⁴/12 in d = 1 (only the callbacks matter here).
        CustomFamily {
            name: "quartic".into(),
            dim: 1,
            support: Domain::whole(1),
            natural_domain: Domain::whole(1),
            psi: Arc::new(|t: &[f64]| 0.5 * t[0] * t[0] + t[0].powi(4) / 12.0),
            grad_psi: Arc::new(move |t: &[f64]| {
                DVector::from_element(1, t[0] + t[0].powi(3) / 3.0 + if broken { 0.01 } else { 0.0 })
            }),
            hess_psi: Arc::new(|t: &[f64]| DMatrix::from_element(1, 1, 1.0 + t[0] * t[0])),
            log_h: Arc::new(|x: &[f64]| -0.5 * x[0] * x[0]),
        }
    }

    #[test]
    fn registry_accepts_consistent_family_and_inverts_it() {
        let mut reg = FamilyRegistry::new();
        let probes: Vec<Vec<f64>> = (-4..=4).map(|k| vec![k as f64 * 0.5]).collect();
        reg.register(quartic_family(false), &probes).unwrap();
        let m = reg.get("quartic").unwrap();
        let th = m.mu_inverse(&[2.0]).unwrap();
        let mu = m.grad_psi(th.as_slice()).unwrap();
        assert!((mu[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn registry_rejects_inconsistent_family() {
        let mut reg = FamilyRegistry::new();
        let err = reg.register(quartic_family(true), &[vec![0.3]]).unwrap_err();
        assert!(matches!(err, Error::InconsistentFamily { .. }));
    }
}
