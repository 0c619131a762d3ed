use crate::error::{Error, Result};
use crate::geometry::{cell_integrals, CellIntegrals, Estimator, IntegrationMethod, IntegrationOptions, Partition};
use crate::models::{ExponentialFamilyModel, MarginalDensity, PriorSpec};
use crate::quadrature::{self, PolygonQuadrature};

/// A model, its marginal over the truncation box, and the quadrature settings
/// shared by every evaluation. Caches C = −∫_B r_B log h.
#[derive(Debug, Clone)]
pub struct Problem {
    model: ExponentialFamilyModel,
    marginal: MarginalDensity,
    integration: IntegrationOptions,
    constant: f64,
    constant_error: f64,
}

impl Problem {
    pub fn new(model: ExponentialFamilyModel, prior: &PriorSpec, eps_trunc: f64, integration: IntegrationOptions) -> Result<Self> {
        let marginal = MarginalDensity::new(&model, prior, eps_trunc)?;
        Self::from_marginal(marginal, integration)
    }

    pub fn from_marginal(marginal: MarginalDensity, integration: IntegrationOptions) -> Result<Self> {
        integration.validate()?;
        let model = marginal.model().clone();
        let (constant, constant_error) = box_integral(&marginal, &integration, |x| {
            -marginal.truncated(x) * model.family().log_h(x)
        });
        if !constant.is_finite() {
            return Err(Error::Integration {
                achieved: f64::INFINITY,
                tolerance: integration.tolerance,
            });
        }
        Ok(Problem {
            model,
            marginal,
            integration,
            constant,
            constant_error,
        })
    }

    pub fn model(&self) -> &ExponentialFamilyModel {
        &self.model
    }

    pub fn marginal(&self) -> &MarginalDensity {
        &self.marginal
    }

    pub fn integration(&self) -> &IntegrationOptions {
        &self.integration
    }

    pub fn dimension(&self) -> usize {
        self.model.dimension()
    }

    pub fn box_lo(&self) -> &[f64] {
        self.marginal.box_lo()
    }

    pub fn box_hi(&self) -> &[f64] {
        self.marginal.box_hi()
    }

    /// C = −∫_B r_B log h.
    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn constant_error(&self) -> f64 {
        self.constant_error
    }

    /// 1 − m_B: mass of r outside the truncation box.
    pub fn truncation_deficit(&self) -> f64 {
        1.0 - self.marginal.mass()
    }

    pub fn partition(&self, est: &Estimator) -> Result<Partition> {
        Partition::build(est, &self.model, self.box_lo(), self.box_hi())
    }

    pub fn cell_integrals(&self, partition: &Partition) -> Result<CellIntegrals> {
        cell_integrals(partition, &self.marginal, &self.integration)
    }

    /// A copy with different quadrature settings (C is recomputed).
    pub fn with_integration(&self, integration: IntegrationOptions) -> Result<Self> {
        Self::from_marginal(self.marginal.clone(), integration)
    }
}

/// ∫_B f with the problem's quadrature rule (value, error estimate).
pub(crate) fn box_integral(marginal: &MarginalDensity, opts: &IntegrationOptions, f: impl Fn(&[f64]) -> f64) -> (f64, f64) {
    let lo = marginal.box_lo();
    let hi = marginal.box_hi();
    let d = lo.len();
    if opts.method == IntegrationMethod::Grid || d > 2 {
        let mut s = 0.0;
        quadrature::for_each_midpoint(lo, hi, opts.grid_points, |x, v| s += v * f(x));
        return (s, 0.0);
    }
    if d == 1 {
        let e = quadrature::integrate_interval(|x| [f(&[x])], lo[0], hi[0], opts.tolerance);
        return (e.value[0], e.error);
    }
    let rect = [[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]];
    let q = PolygonQuadrature::new([lo[0], lo[1]], [hi[0], hi[1]], opts.tolerance);
    let e = quadrature::integrate_polygon(&rect, &|p: [f64; 2]| [f(&p)], &q);
    (e.value[0], e.error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::DEFAULT_EPS_TRUNC;

    #[test]
    fn gaussian_constant_closed_form() {
        // −E[log h] = E‖X‖²/2 + (d/2)log 2π with E‖X‖² = d(1+s₀²)
        for (d, s0) in [(1usize, 3.0), (2, 1.0)] {
            let model = ExponentialFamilyModel::isotropic_gaussian(d).unwrap();
            let prior = PriorSpec::gaussian(vec![0.0; d], s0).unwrap();
            let p = Problem::new(model, &prior, DEFAULT_EPS_TRUNC, IntegrationOptions::default()).unwrap();
            let df = d as f64;
            let exact = 0.5 * df * (1.0 + s0 * s0) + 0.5 * df * (2.0 * std::f64::consts::PI).ln();
            // truncation removes the far tail, so C is slightly below the full value
            assert!((p.constant() - exact).abs() < 1e-3, "{} vs {exact}", p.constant());
            assert!(p.constant() < exact);
        }
    }
}
