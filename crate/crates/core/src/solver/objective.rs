//! The expected code length I₁, the stationarity residual and the
//! alternating (Lloyd) update.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::EmptyCellPolicy;
use super::problem::Problem;
use crate::error::{Error, Result};
use crate::geometry::{integrate_over_cells, CellIntegrals, Estimator, Partition};
use crate::quadrature;

/// Cells with less mass than this are treated as empty.
pub const EMPTY_CELL_MASS: f64 = 1e-12;

/// Both forms of I₁ for one estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct I1Evaluation {
    /// The reported value: `closed_form` when the estimator is stationary, else `direct`.
    pub value: f64,
    /// C − Σ qᵢ(log qᵢ + θ̂ᵢ·μ(θ̂ᵢ) − ψ(θ̂ᵢ)).
    pub closed_form: f64,
    /// Σᵢ ∫_{Vᵢ} r_B (−λᵢ − log h), integrated directly.
    pub direct: f64,
    pub constant: f64,
    /// ‖residual‖∞ ≤ tolerance, so the closed form applies.
    pub stationary: bool,
    pub residual_norm: f64,
    /// Quadrature error estimate for the direct form.
    pub error: f64,
}

/// C − Σ qᵢ(log qᵢ + θ̂ᵢ·μ(θ̂ᵢ) − ψ(θ̂ᵢ)). Only equals I₁ when the qᵢ, θ̂ᵢ are
/// the cell masses and mean-matched parameters of their own partition.
pub fn closed_form_i1(problem: &Problem, est: &Estimator) -> Result<f64> {
    let model = problem.model();
    let mut s = 0.0;
    for i in 0..est.n() {
        let th = est.theta(i).as_slice();
        let mu = model.grad_psi(th)?;
        let dot: f64 = th.iter().zip(mu.iter()).map(|(a, b)| a * b).sum();
        let q = est.q(i);
        s += q * (q.ln() + dot - model.psi(th)?);
    }
    Ok(problem.constant() - s)
}

/// Direct quadrature of −∫ r_B log(q(x) f(x | θ̂(x))) over the partition.
pub fn direct_i1(problem: &Problem, partition: &Partition) -> Result<(f64, f64)> {
    let scores = partition.scores();
    let fam = problem.model().family();
    let marginal = problem.marginal();
    // inside cell i the argmax is i, and on shared faces the scores agree
    let est = integrate_over_cells(
        partition,
        |x| {
            let (i, _) = scores.argmax(x);
            [marginal.truncated(x) * (-scores.score(i, x) - fam.log_h(x))]
        },
        problem.integration(),
    );
    let value = est.iter().map(|e| e.value[0]).sum();
    let error = est.iter().map(|e| e.error).sum();
    Ok((value, error))
}

/// [q − M; q·μ − S]: n mass entries followed by n·d moment entries.
pub fn residual_from(problem: &Problem, est: &Estimator, ci: &CellIntegrals) -> Result<Vec<f64>> {
    let n = est.n();
    let d = est.dimension();
    let mut out = Vec::with_capacity(n * (d + 1));
    for i in 0..n {
        out.push(est.q(i) - ci.mass[i]);
    }
    for i in 0..n {
        let mu = problem.model().grad_psi(est.theta(i).as_slice())?;
        for k in 0..d {
            out.push(est.q(i) * mu[k] - ci.moment[i][k]);
        }
    }
    Ok(out)
}

/// The n(d+1) stationarity residual at `est`.
pub fn residual(problem: &Problem, est: &Estimator) -> Result<Vec<f64>> {
    let p = problem.partition(est)?;
    let ci = problem.cell_integrals(&p)?;
    residual_from(problem, est, &ci)
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// I₁ at `est`; the closed form is reported when ‖residual‖∞ ≤ `tolerance`.
pub fn evaluate_i1(problem: &Problem, est: &Estimator, tolerance: f64) -> Result<I1Evaluation> {
    let partition = problem.partition(est)?;
    let ci = problem.cell_integrals(&partition)?;
    let res = residual_from(problem, est, &ci)?;
    let residual_norm = inf_norm(&res);
    let closed_form = closed_form_i1(problem, est)?;
    let (direct, error) = direct_i1(problem, &partition)?;
    let stationary = residual_norm <= tolerance;
    Ok(I1Evaluation {
        value: if stationary { closed_form } else { direct },
        closed_form,
        direct,
        constant: problem.constant(),
        stationary,
        residual_norm,
        error: error + problem.constant_error(),
    })
}

/// An empty cell met during an update, and what was done about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmptyCellEvent {
    pub iteration: usize,
    pub cell: usize,
    pub mass: f64,
    pub reseeded_at: Vec<f64>,
}

/// One alternating update: qᵢ′ = Mᵢ/ΣM, θ̂ᵢ′ = μ⁻¹(Sᵢ/Mᵢ) on the cells of `est`.
pub fn lloyd_step(problem: &Problem, est: &Estimator, policy: EmptyCellPolicy) -> Result<Estimator> {
    let p = problem.partition(est)?;
    let ci = problem.cell_integrals(&p)?;
    lloyd_update(problem, &p, &ci, policy, 0, &mut Vec::new())
}

pub(crate) fn lloyd_update(
    problem: &Problem,
    partition: &Partition,
    ci: &CellIntegrals,
    policy: EmptyCellPolicy,
    iteration: usize,
    events: &mut Vec<EmptyCellEvent>,
) -> Result<Estimator> {
    let est = partition.estimator();
    let n = est.n();
    let model = problem.model();
    let mut thetas: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut empty = Vec::new();
    for i in 0..n {
        if ci.mass[i] < EMPTY_CELL_MASS {
            if policy == EmptyCellPolicy::Fail {
                return Err(Error::EmptyCell {
                    index: i,
                    mass: ci.mass[i],
                });
            }
            empty.push(i);
            thetas.push(est.theta(i).clone());
            weights.push(0.0);
            continue;
        }
        let mean: Vec<f64> = ci.moment[i].iter().map(|s| s / ci.mass[i]).collect();
        thetas.push(model.mu_inverse(&mean)?);
        weights.push(ci.mass[i]);
    }
    if !empty.is_empty() {
        let total: f64 = weights.iter().sum();
        let seed_q = 1.0 / (10.0 * n as f64);
        for w in weights.iter_mut() {
            *w *= (1.0 - seed_q * empty.len() as f64) / total;
        }
        for (k, &i) in empty.iter().enumerate() {
            let x = worst_coded_point(problem, partition, &thetas, &empty[k..])?;
            thetas[i] = model.mu_inverse(&x)?;
            weights[i] = seed_q;
            events.push(EmptyCellEvent {
                iteration,
                cell: i,
                mass: ci.mass[i],
                reseeded_at: x,
            });
        }
    }
    Estimator::from_weights(thetas, weights)
}

/// Lattice resolution per axis used when searching for reseed points.
const RESEED_GRID: [usize; 3] = [2001, 201, 21];

/// The likely point (r ≥ 10⁻³ max r) with the longest current code length
/// −log h(x) − maxᵢ λᵢ(x), kept away from existing assertion means.
fn worst_coded_point(problem: &Problem, partition: &Partition, thetas: &[DVector<f64>], skip: &[usize]) -> Result<Vec<f64>> {
    let d = problem.dimension();
    let per_axis = RESEED_GRID[(d - 1).min(2)];
    let lo = problem.box_lo();
    let hi = problem.box_hi();
    let marginal = problem.marginal();
    let fam = problem.model().family();
    let scores = partition.scores();
    let means: Vec<DVector<f64>> = thetas
        .iter()
        .enumerate()
        .filter(|(i, _)| !skip.contains(i))
        .map(|(_, t)| fam.grad_psi(t.as_slice()))
        .collect();
    let mut rmax = 0.0f64;
    quadrature::for_each_midpoint(lo, hi, per_axis, |x, _| rmax = rmax.max(marginal.eval(x)));
    let min_sep: f64 = (0..d).map(|k| (hi[k] - lo[k]) / per_axis as f64).fold(0.0, f64::max);
    let mut best: Option<(f64, Vec<f64>)> = None;
    quadrature::for_each_midpoint(lo, hi, per_axis, |x, _| {
        if marginal.eval(x) < 1e-3 * rmax {
            return;
        }
        if means.iter().any(|m| m.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() <= min_sep) {
            return;
        }
        let len = -fam.log_h(x) - scores.argmax(x).1;
        if best.as_ref().is_none_or(|(b, _)| len > *b) {
            best = Some((len, x.to_vec()));
        }
    });
    best.map(|(_, x)| x)
        .ok_or_else(|| Error::Unsupported("no admissible point to reseed an empty cell".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::IntegrationOptions;
    use crate::models::{ExponentialFamilyModel, PriorSpec, DEFAULT_EPS_TRUNC};

    fn gaussian_problem(d: usize, s0: f64) -> Problem {
        let model = ExponentialFamilyModel::isotropic_gaussian(d).unwrap();
        let prior = PriorSpec::gaussian(vec![0.0; d], s0).unwrap();
        Problem::new(model, &prior, DEFAULT_EPS_TRUNC, IntegrationOptions::default()).unwrap()
    }

    #[test]
    fn single_cell_is_trivially_stationary() {
        let p = gaussian_problem(2, 1.0);
        let est = Estimator::from_rows(&[vec![0.0, 0.0]], &[1.0]).unwrap();
        let e = evaluate_i1(&p, &est, 1e-8).unwrap();
        assert!(e.stationary);
        assert!(e.residual_norm < 1e-10);
        assert!((e.value - p.constant()).abs() < 1e-14);
        assert!((e.direct - e.closed_form).abs() < 1e-9);
        let next = lloyd_step(&p, &est, EmptyCellPolicy::Reseed).unwrap();
        assert!((next.q(0) - 1.0).abs() < 1e-15);
        assert!(next.theta(0).norm() < 1e-10);
    }

    #[test]
    fn empty_cell_reseeded_or_failed() {
        let p = gaussian_problem(1, 1.0);
        let est = Estimator::from_rows(&[vec![-1.0], vec![0.0], vec![1.0]], &[0.4999995, 1e-6, 0.4999995]).unwrap();
        assert!(matches!(
            lloyd_step(&p, &est, EmptyCellPolicy::Fail),
            Err(Error::EmptyCell { index: 1, .. })
        ));
        let mut events = Vec::new();
        let part = p.partition(&est).unwrap();
        let ci = p.cell_integrals(&part).unwrap();
        let next = lloyd_update(&p, &part, &ci, EmptyCellPolicy::Reseed, 0, &mut events).unwrap();
        assert_eq!(events.len(), 1);
        assert!((next.q(1) - 1.0 / 30.0).abs() < 1e-15);
        assert!((next.coding_probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}
