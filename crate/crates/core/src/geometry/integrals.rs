//! Integrals of the truncated marginal over the cells of a partition.

use serde::{Deserialize, Serialize};

use super::partition::{CellShape, Partition};
use crate::error::{Error, Result};
use crate::models::MarginalDensity;
use crate::quadrature::{self, Estimate, PolygonQuadrature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrationMethod {
    /// Adaptive Gauss-Kronrod (d = 1), adaptive triangle rule (d = 2), grid otherwise.
    #[default]
    Adaptive,
    /// Midpoint grid with cell assignment at each grid center, any d.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationOptions {
    /// Absolute tolerance for an integral of the normalized density over B.
    pub tolerance: f64,
    /// Grid points per axis for the grid method.
    pub grid_points: usize,
    pub method: IntegrationMethod,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions {
            tolerance: 1e-11,
            grid_points: 256,
            method: IntegrationMethod::Adaptive,
        }
    }
}

impl IntegrationOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::param("integration.tolerance", "must be positive"));
        }
        if self.grid_points < 2 {
            return Err(Error::param("integration.grid_points", "must be at least 2"));
        }
        Ok(())
    }

    fn uses_grid(&self, d: usize) -> bool {
        self.method == IntegrationMethod::Grid || d > 2
    }
}

/// Mᵢ = ∫_{Vᵢ} r_B and Sᵢ = ∫_{Vᵢ} x r_B, where r_B = r / m_B is the marginal
/// renormalized on the truncation box (so Σ Mᵢ = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct CellIntegrals {
    pub mass: Vec<f64>,
    pub moment: Vec<Vec<f64>>,
    /// Sum of the per-cell absolute error estimates.
    pub error: f64,
    /// Some subregion did not meet its tolerance.
    pub unresolved: bool,
}

impl CellIntegrals {
    pub fn n(&self) -> usize {
        self.mass.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Sᵢ / Mᵢ, or None for an empty cell.
    pub fn mean(&self, i: usize) -> Option<Vec<f64>> {
        (self.mass[i] > 0.0).then(|| self.moment[i].iter().map(|s| s / self.mass[i]).collect())
    }
}

/// Integrates `f` (evaluated at points of B) over every cell.
///
/// Results are merged in cell order, so the output is deterministic.
pub fn integrate_over_cells<const K: usize, F>(partition: &Partition, f: F, opts: &IntegrationOptions) -> Vec<Estimate<K>>
where
    F: Fn(&[f64]) -> [f64; K] + Sync,
{
    let d = partition.dimension();
    let n = partition.n();
    if opts.uses_grid(d) {
        let sums = grid_sums(partition, K, opts.grid_points, |x, out| out.copy_from_slice(&f(x)));
        return sums
            .into_iter()
            .map(|v| {
                let mut e = Estimate::zero();
                e.value.copy_from_slice(&v);
                e
            })
            .collect();
    }
    let lo = partition.box_lo();
    let hi = partition.box_hi();
    let mut out = Vec::with_capacity(n);
    for cell in partition.cells() {
        if cell.empty {
            out.push(Estimate::zero());
            continue;
        }
        let e = match &cell.shape {
            CellShape::Interval { lo: a, hi: b } => {
                let width = hi[0] - lo[0];
                quadrature::integrate_interval(|x| f(&[x]), *a, *b, opts.tolerance * (b - a) / width)
            }
            CellShape::Polygon(poly) => {
                let q = PolygonQuadrature::new([lo[0], lo[1]], [hi[0], hi[1]], opts.tolerance);
                quadrature::integrate_polygon(&poly.vertices, &|p: [f64; 2]| f(&p), &q)
            }
            CellShape::Implicit => unreachable!("implicit cells always use the grid"),
        };
        out.push(e);
    }
    out
}

/// Midpoint-grid sums over cells with a runtime integrand width `k`.
fn grid_sums<F>(partition: &Partition, k: usize, per_axis: usize, f: F) -> Vec<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    let mut sums = vec![vec![0.0; k]; partition.n()];
    let mut buf = vec![0.0; k];
    quadrature::for_each_midpoint(partition.box_lo(), partition.box_hi(), per_axis, |x, vol| {
        let i = partition.assign(x);
        f(x, &mut buf);
        for (s, v) in sums[i].iter_mut().zip(&buf) {
            *s += v * vol;
        }
    });
    sums
}

/// Mass and first moment of the truncated marginal over each cell.
pub fn cell_integrals(partition: &Partition, marginal: &MarginalDensity, opts: &IntegrationOptions) -> Result<CellIntegrals> {
    opts.validate()?;
    let d = partition.dimension();
    if marginal.dimension() != d {
        return Err(Error::param("marginal", "dimension does not match the partition"));
    }
    let (mass, moment, error, unresolved) = match d {
        1 if !opts.uses_grid(1) => {
            let e = integrate_over_cells(
                partition,
                |x| {
                    let r = marginal.truncated(x);
                    [r, x[0] * r]
                },
                opts,
            );
            collect(&e, 1)
        }
        2 if !opts.uses_grid(2) => {
            let e = integrate_over_cells(
                partition,
                |x| {
                    let r = marginal.truncated(x);
                    [r, x[0] * r, x[1] * r]
                },
                opts,
            );
            collect(&e, 2)
        }
        _ => {
            let sums = grid_sums(partition, d + 1, opts.grid_points, |x, out| {
                let r = marginal.truncated(x);
                out[0] = r;
                for k in 0..d {
                    out[k + 1] = x[k] * r;
                }
            });
            let mass = sums.iter().map(|v| v[0]).collect();
            let moment = sums.iter().map(|v| v[1..].to_vec()).collect();
            (mass, moment, 0.0, false)
        }
    };
    Ok(CellIntegrals {
        mass,
        moment,
        error,
        unresolved,
    })
}

fn collect<const K: usize>(e: &[Estimate<K>], d: usize) -> (Vec<f64>, Vec<Vec<f64>>, f64, bool) {
    let mass = e.iter().map(|v| v.value[0].max(0.0)).collect();
    let moment = e.iter().map(|v| v.value[1..=d].to_vec()).collect();
    let error = e.iter().map(|v| v.error).sum();
    let unresolved = e.iter().any(|v| v.unresolved);
    (mass, moment, error, unresolved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Estimator;
    use crate::models::{ExponentialFamilyModel, PriorSpec, DEFAULT_EPS_TRUNC};

    fn setup(d: usize, s0: f64) -> (ExponentialFamilyModel, MarginalDensity) {
        let m = ExponentialFamilyModel::isotropic_gaussian(d).unwrap();
        let p = PriorSpec::gaussian(vec![0.0; d], s0).unwrap();
        let r = MarginalDensity::new(&m, &p, DEFAULT_EPS_TRUNC).unwrap();
        (m, r)
    }

    #[test]
    fn single_cell_has_unit_mass_and_marginal_mean() {
        for d in [1, 2] {
            let (m, r) = setup(d, 1.0);
            let est = Estimator::from_rows(&[vec![0.0; d]], &[1.0]).unwrap();
            let p = Partition::build(&est, &m, r.box_lo(), r.box_hi()).unwrap();
            let ci = cell_integrals(&p, &r, &IntegrationOptions::default()).unwrap();
            assert!((ci.mass[0] - 1.0).abs() < 1e-10, "{}", ci.mass[0]);
            assert!(ci.moment[0].iter().all(|s| s.abs() < 1e-10));
        }
    }

    #[test]
    fn symmetric_split_halves_mass() {
        let (m, r) = setup(2, 1.0);
        let est = Estimator::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[0.5, 0.5]).unwrap();
        let p = Partition::build(&est, &m, r.box_lo(), r.box_hi()).unwrap();
        let ci = cell_integrals(&p, &r, &IntegrationOptions::default()).unwrap();
        assert!((ci.mass[0] - 0.5).abs() < 1e-10);
        assert!((ci.mass[1] - 0.5).abs() < 1e-10);
        // E[X₁ | X₁ > 0] for N(0, 2) is 2/√π; the box drops a tail of mass 1e-6
        let half_mean = 2.0 / std::f64::consts::PI.sqrt();
        assert!((ci.moment[0][0] - 0.5 * half_mean).abs() < 2e-5);
    }

    #[test]
    fn grid_matches_adaptive() {
        let (m, r) = setup(2, 2.0);
        let est = Estimator::from_rows(&[vec![1.0, 0.3], vec![-0.8, 0.1], vec![0.2, -1.1]], &[0.3, 0.3, 0.4]).unwrap();
        let p = Partition::build(&est, &m, r.box_lo(), r.box_hi()).unwrap();
        let a = cell_integrals(&p, &r, &IntegrationOptions::default()).unwrap();
        let g = cell_integrals(
            &p,
            &r,
            &IntegrationOptions {
                method: IntegrationMethod::Grid,
                grid_points: 400,
                ..Default::default()
            },
        )
        .unwrap();
        for i in 0..3 {
            assert!((a.mass[i] - g.mass[i]).abs() < 2e-3, "{} vs {}", a.mass[i], g.mass[i]);
        }
        assert!((a.total_mass() - 1.0).abs() < 1e-9);
    }
}
