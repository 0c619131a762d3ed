//! Single-start solvers: pure alternating updates, and a safeguarded
//! Broyden iteration on the stationarity equations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::{SolveMethod, SolverConfig};
use super::objective::{closed_form_i1, direct_i1, inf_norm, lloyd_update, residual_from, EmptyCellEvent};
use super::problem::Problem;
use crate::error::Result;
use crate::geometry::Estimator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    Lloyd,
    Broyden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub kind: StepKind,
    /// For Lloyd steps: I₁ of the updated estimator on the partition it was
    /// fitted to (non-increasing). For Broyden steps: the closed form at the iterate.
    pub i1: f64,
    /// ‖residual‖∞ of the estimator the step started from.
    pub residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub empty_cell_events: Vec<EmptyCellEvent>,
    pub quadrature_warnings: Vec<String>,
    pub lloyd_fallbacks: usize,
    pub jacobian_evaluations: usize,
    /// 1 − m_B.
    pub truncation_deficit: f64,
    /// Σᵢ(qᵢ − Mᵢ): zero up to quadrature error because cell integrals use r/m_B.
    pub redundant_residual: f64,
    /// Sum of the per-cell quadrature error estimates at the final estimator.
    pub quadrature_error: f64,
    /// Face-inequality rejection, if any.
    pub rejected: Option<String>,
    /// The Broyden phase stopped early for lack of progress.
    pub stalled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    #[serde(with = "estimator_serde")]
    pub estimator: Estimator,
    /// Closed-form I₁ at the final estimator.
    pub i1: f64,
    /// Directly integrated I₁ at the final estimator.
    pub i1_direct: f64,
    pub constant: f64,
    pub residual: Vec<f64>,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
    pub restart_index: usize,
    pub seed: u64,
    pub diagnostics: Diagnostics,
}

pub(crate) mod estimator_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Raw {
        assertions: Vec<Vec<f64>>,
        coding_probabilities: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(e: &Estimator, s: S) -> std::result::Result<S::Ok, S::Error> {
        Raw {
            assertions: e.theta_rows(),
            coding_probabilities: e.coding_probabilities().to_vec(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Estimator, D::Error> {
        let raw = Raw::deserialize(d)?;
        Estimator::from_rows(&raw.assertions, &raw.coding_probabilities).map_err(serde::de::Error::custom)
    }
}

/// Everything computed from one estimator: its cells' integrals and residual.
struct Eval {
    est: Estimator,
    residual: Vec<f64>,
    /// Square system: the last mass equation is dropped.
    square: DVector<f64>,
    norm_inf: f64,
    quad_error: f64,
    unresolved: bool,
    next_lloyd: Option<Estimator>,
}

fn evaluate(problem: &Problem, est: Estimator, want_lloyd: Option<(&SolverConfig, usize, &mut Vec<EmptyCellEvent>)>) -> Result<Eval> {
    let part = problem.partition(&est)?;
    let ci = problem.cell_integrals(&part)?;
    let residual = residual_from(problem, &est, &ci)?;
    let n = est.n();
    let square = DVector::from_iterator(
        residual.len() - 1,
        residual.iter().enumerate().filter(|(k, _)| *k != n - 1).map(|(_, v)| *v),
    );
    let next_lloyd = match want_lloyd {
        Some((cfg, it, events)) => Some(lloyd_update(problem, &part, &ci, cfg.empty_cell_policy, it, events)?),
        None => None,
    };
    Ok(Eval {
        norm_inf: inf_norm(&residual),
        quad_error: ci.error,
        unresolved: ci.unresolved,
        residual,
        square,
        est,
        next_lloyd,
    })
}

/// Unconstrained coordinates: logits ℓ₁..ℓₙ₋₁ (ℓₙ = 0) then the θ̂ᵢ.
fn to_params(est: &Estimator) -> DVector<f64> {
    let n = est.n();
    let d = est.dimension();
    let mut z = DVector::zeros(n - 1 + n * d);
    let ln_last = est.q(n - 1).ln();
    for i in 0..n - 1 {
        z[i] = est.q(i).ln() - ln_last;
    }
    for i in 0..n {
        for k in 0..d {
            z[n - 1 + i * d + k] = est.theta(i)[k];
        }
    }
    z
}

fn from_params(z: &DVector<f64>, n: usize, d: usize) -> Result<Estimator> {
    let mut logits: Vec<f64> = (0..n - 1).map(|i| z[i]).collect();
    logits.push(0.0);
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let thetas = (0..n)
        .map(|i| DVector::from_iterator(d, (0..d).map(|k| z[n - 1 + i * d + k])))
        .collect();
    Estimator::from_weights(thetas, w)
}

/// Relative singular-value cutoff for the pseudo-inverse step.
const PINV_CUTOFF: f64 = 1e-10;
/// Central-difference step for the Jacobian. The residual is smooth to
/// rounding, so the O(h²) truncation error dominates.
const FD_STEP: f64 = 1e-5;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 30;
/// A step that shrinks ‖F‖ by less than this factor triggers a fresh Jacobian.
const POOR_PROGRESS: f64 = 0.5;
/// The Broyden phase stops when ‖F‖∞ has not fallen tenfold over this many steps.
const STALL_WINDOW: usize = 25;

fn fd_jacobian(problem: &Problem, base: &Eval, z: &DVector<f64>, n: usize, d: usize) -> Option<DMatrix<f64>> {
    let m = base.square.len();
    let mut jac = DMatrix::zeros(m, z.len());
    let at = |zp: &DVector<f64>| from_params(zp, n, d).and_then(|e| evaluate(problem, e, None)).ok().map(|e| e.square);
    for j in 0..z.len() {
        let h = FD_STEP * z[j].abs().max(1.0);
        let mut zp = z.clone();
        zp[j] = z[j] + h;
        let fwd = at(&zp);
        zp[j] = z[j] - h;
        let bwd = at(&zp);
        // one-sided when a side leaves Θ or degenerates
        let col = match (fwd, bwd) {
            (Some(f), Some(b)) => (f - b) / (2.0 * h),
            (Some(f), None) => (f - &base.square) / h,
            (None, Some(b)) => (&base.square - b) / h,
            (None, None) => return None,
        };
        jac.set_column(j, &col);
    }
    Some(jac)
}

fn pinv_step(jac: &DMatrix<f64>, f: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = jac.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return None;
    }
    svd.solve(&(-f), PINV_CUTOFF * smax).ok()
}

/// Runs one solve from `init` with the configured method.
pub fn solve_from(problem: &Problem, config: &SolverConfig, init: Estimator) -> Result<SolveResult> {
    config.validate()?;
    match config.method {
        SolveMethod::Lloyd => run(problem, config, init, false),
        SolveMethod::Hybrid => run(problem, config, init, true),
    }
}

/// Broyden iteration on the square stationarity system with backtracking on
/// ‖F‖², a fresh finite-difference Jacobian when a Broyden step fails, and a
/// Lloyd step when even that fails.
pub fn quasi_newton_solve(problem: &Problem, config: &SolverConfig, init: Estimator) -> Result<SolveResult> {
    config.validate()?;
    run(problem, config, init, true)
}

/// Alternating updates until the residual tolerance is met.
pub fn lloyd_solve(problem: &Problem, config: &SolverConfig, init: Estimator) -> Result<SolveResult> {
    config.validate()?;
    run(problem, config, init, false)
}

fn run(problem: &Problem, config: &SolverConfig, init: Estimator, newton: bool) -> Result<SolveResult> {
    let n = init.n();
    let d = init.dimension();
    let tol = config.residual_tolerance;
    let mut diag = Diagnostics {
        truncation_deficit: problem.truncation_deficit(),
        ..Default::default()
    };
    let mut trace = Vec::new();
    let mut iteration = 0usize;
    let mut cur = evaluate(problem, init, Some((config, 0, &mut diag.empty_cell_events)))?;
    let mut best_i1_prev = f64::INFINITY;

    // Alternating phase: the whole solve for Lloyd, a warm-up for the hybrid.
    let warmup_limit = if newton { config.warmup_iterations } else { config.max_iterations };
    while cur.norm_inf > tol && iteration < warmup_limit.min(config.max_iterations) {
        if newton && cur.norm_inf <= config.warmup_residual {
            break;
        }
        iteration += 1;
        let next = cur.next_lloyd.take().expect("lloyd update requested");
        let i1 = closed_form_i1(problem, &next)?;
        trace.push(TraceEntry {
            iteration,
            kind: StepKind::Lloyd,
            i1,
            residual: cur.norm_inf,
        });
        cur = evaluate(problem, next, Some((config, iteration, &mut diag.empty_cell_events)))?;
        if newton && (best_i1_prev - i1).abs() <= config.i1_tolerance {
            break;
        }
        best_i1_prev = i1;
    }

    if newton && n * (d + 1) > 1 {
        let mut z = to_params(&cur.est);
        let mut jac: Option<DMatrix<f64>> = None;
        let mut fresh = false;
        let mut history: Vec<f64> = Vec::new();
        while cur.norm_inf > tol && iteration < config.max_iterations {
            history.push(cur.norm_inf);
            if history.len() > STALL_WINDOW && cur.norm_inf > 0.1 * history[history.len() - 1 - STALL_WINDOW] {
                diag.stalled = true;
                break;
            }
            iteration += 1;
            if jac.is_none() {
                jac = fd_jacobian(problem, &cur, &z, n, d);
                diag.jacobian_evaluations += 1;
                fresh = true;
            }
            let accepted = jac
                .as_ref()
                .and_then(|j| pinv_step(j, &cur.square))
                .and_then(|s| line_search(problem, &cur, &z, &s, n, d));
            match accepted {
                Some((znew, enew, step)) => {
                    let slow = enew.square.norm() > POOR_PROGRESS * cur.square.norm();
                    // Broyden's good update with the step actually taken
                    if let Some(j) = jac.as_mut() {
                        let y = &enew.square - &cur.square;
                        let ss = step.dot(&step);
                        if ss > 0.0 {
                            let u = (y - &*j * &step) / ss;
                            *j += u * step.transpose();
                        }
                    }
                    if slow && !fresh {
                        jac = None;
                    }
                    fresh = false;
                    trace.push(TraceEntry {
                        iteration,
                        kind: StepKind::Broyden,
                        i1: closed_form_i1(problem, &enew.est)?,
                        residual: cur.norm_inf,
                    });
                    z = znew;
                    cur = enew;
                }
                None if !fresh => {
                    jac = None;
                    iteration -= 1;
                }
                None => {
                    diag.lloyd_fallbacks += 1;
                    let lloyd = evaluate(problem, cur.est.clone(), Some((config, iteration, &mut diag.empty_cell_events)))?;
                    let next = lloyd.next_lloyd.expect("lloyd update requested");
                    trace.push(TraceEntry {
                        iteration,
                        kind: StepKind::Lloyd,
                        i1: closed_form_i1(problem, &next)?,
                        residual: cur.norm_inf,
                    });
                    cur = evaluate(problem, next, None)?;
                    z = to_params(&cur.est);
                    jac = None;
                }
            }
        }
    }

    finish(problem, cur, trace, iteration, diag, tol)
}

type Accepted = (DVector<f64>, Eval, DVector<f64>);

fn line_search(problem: &Problem, cur: &Eval, z: &DVector<f64>, step: &DVector<f64>, n: usize, d: usize) -> Option<Accepted> {
    let f0 = cur.square.norm_squared();
    let mut alpha = 1.0;
    for _ in 0..MAX_BACKTRACKS {
        let s = step * alpha;
        let zt = z + &s;
        if let Ok(e) = from_params(&zt, n, d).and_then(|est| evaluate(problem, est, None)) {
            if e.square.norm_squared() <= (1.0 - ARMIJO * alpha) * f0 {
                return Some((zt, e, s));
            }
        }
        alpha *= 0.5;
    }
    None
}

fn finish(problem: &Problem, cur: Eval, trace: Vec<TraceEntry>, iterations: usize, mut diag: Diagnostics, tol: f64) -> Result<SolveResult> {
    let n = cur.est.n();
    let part = problem.partition(&cur.est)?;
    let (i1_direct, direct_err) = direct_i1(problem, &part)?;
    let i1 = closed_form_i1(problem, &cur.est)?;
    diag.redundant_residual = cur.residual[..n].iter().sum();
    diag.quadrature_error = cur.quad_error + direct_err;
    if cur.unresolved {
        diag.quadrature_warnings
            .push("cell quadrature hit its refinement limit before meeting the tolerance".into());
    }
    Ok(SolveResult {
        i1,
        i1_direct,
        constant: problem.constant(),
        residual_norm: cur.norm_inf,
        converged: cur.norm_inf <= tol,
        residual: cur.residual,
        estimator: cur.est,
        iterations,
        trace,
        restart_index: 0,
        seed: 0,
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::IntegrationOptions;
    use crate::models::{ExponentialFamilyModel, PriorSpec, DEFAULT_EPS_TRUNC};

    fn problem(d: usize, s0: f64) -> Problem {
        let model = ExponentialFamilyModel::isotropic_gaussian(d).unwrap();
        let prior = PriorSpec::gaussian(vec![0.0; d], s0).unwrap();
        Problem::new(model, &prior, DEFAULT_EPS_TRUNC, IntegrationOptions::default()).unwrap()
    }

    #[test]
    fn params_round_trip() {
        let est = Estimator::from_rows(&[vec![0.1, 0.2], vec![-0.3, 0.4], vec![1.0, -1.0]], &[0.2, 0.3, 0.5]).unwrap();
        let back = from_params(&to_params(&est), 3, 2).unwrap();
        for i in 0..3 {
            assert!((back.q(i) - est.q(i)).abs() < 1e-15);
            assert_eq!(back.theta(i), est.theta(i));
        }
    }

    #[test]
    fn single_cell_converges_immediately() {
        let p = problem(2, 1.0);
        let init = Estimator::from_rows(&[vec![0.5, -0.2]], &[1.0]).unwrap();
        let r = quasi_newton_solve(&p, &SolverConfig::with_n(1), init).unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 3);
        assert!(r.estimator.theta(0).norm() < 1e-10);
    }

    #[test]
    fn one_dimensional_pair_converges() {
        let p = problem(1, 3.0);
        let init = Estimator::from_rows(&[vec![-1.0], vec![2.0]], &[0.5, 0.5]).unwrap();
        let r = quasi_newton_solve(&p, &SolverConfig::with_n(2), init).unwrap();
        assert!(r.converged, "residual {}", r.residual_norm);
        assert!((r.estimator.theta(0)[0] + r.estimator.theta(1)[0]).abs() < 1e-6);
        assert!((r.i1 - r.i1_direct).abs() < 1e-8);
    }
}
