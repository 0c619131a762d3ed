use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use super::checks::{face_inequality_check, FACE_INEQUALITY_TOLERANCE};
use super::config::{InitStrategy, SolverConfig};
use super::problem::Problem;
use super::solve::{solve_from, SolveResult};
use crate::error::{Error, Result};
use crate::geometry::Estimator;
use crate::quadrature;

/// Lattice resolution per axis for sampling initial means from r.
const SAMPLE_GRID: [usize; 3] = [4001, 301, 31];

/// Builds the starting estimator for restart seed `seed`.
pub fn initial_estimator(problem: &Problem, config: &SolverConfig, seed: u64) -> Result<Estimator> {
    let n = config.n;
    let d = problem.dimension();
    let model = problem.model();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = match config.init {
        InitStrategy::UserSupplied => {
            let init = config
                .initial
                .as_ref()
                .ok_or_else(|| Error::param("solver.initial", "missing"))?;
            return Estimator::from_rows(&init.assertions, &init.coding_probabilities);
        }
        InitStrategy::RandomFromR => {
            let per_axis = SAMPLE_GRID[(d - 1).min(2)];
            let lo = problem.box_lo();
            let hi = problem.box_hi();
            let step: Vec<f64> = (0..d).map(|k| (hi[k] - lo[k]) / per_axis as f64).collect();
            let mut points = Vec::new();
            let mut weights = Vec::new();
            quadrature::for_each_midpoint(lo, hi, per_axis, |x, v| {
                points.push(x.to_vec());
                weights.push(problem.marginal().eval(x) * v);
            });
            if n > points.len() {
                return Err(Error::param("solver.n", "more cells than sampling lattice points"));
            }
            let picked = rand::seq::index::sample_weighted(&mut rng, points.len(), |k| weights[k], n)
                .map_err(|e| Error::Unsupported(format!("weighted sampling failed: {e}")))?;
            picked
                .into_iter()
                .map(|k| {
                    (0..d)
                        .map(|a| points[k][a] + (rng.random::<f64>() - 0.5) * step[a])
                        .collect()
                })
                .collect()
        }
        InitStrategy::PerturbedGrid => {
            let m = problem.marginal().moment();
            let lo = problem.box_lo();
            let hi = problem.box_hi();
            let per_axis = (n as f64).powf(1.0 / d as f64).ceil().max(1.0) as usize;
            // central half of B around the mean, clipped to B
            let half: Vec<f64> = (0..d).map(|k| 0.25 * (hi[k] - lo[k])).collect();
            let mut lattice = Vec::new();
            let total = per_axis.pow(d as u32);
            for flat in 0..total {
                let mut rem = flat;
                let mut x = vec![0.0; d];
                for k in (0..d).rev() {
                    let idx = rem % per_axis;
                    rem /= per_axis;
                    let u = if per_axis == 1 { 0.5 } else { idx as f64 / (per_axis - 1) as f64 };
                    x[k] = (m[k] - half[k] + 2.0 * half[k] * u).clamp(lo[k], hi[k]);
                }
                lattice.push(x);
            }
            lattice.shuffle(&mut rng);
            let spacing: Vec<f64> = half.iter().map(|h| 2.0 * h / per_axis.max(2) as f64).collect();
            lattice
                .into_iter()
                .take(n)
                .map(|x| {
                    x.iter()
                        .enumerate()
                        .map(|(k, v)| (v + 0.1 * spacing[k] * (rng.random::<f64>() - 0.5)).clamp(lo[k], hi[k]))
                        .collect()
                })
                .collect()
        }
    };
    let thetas: Vec<DVector<f64>> = means.iter().map(|m| model.mu_inverse(m)).collect::<Result<_>>()?;
    Estimator::new(thetas, vec![1.0 / n as f64; n])
}

/// Every restart failed to converge (or was rejected); carries the best
/// attempt for best-effort reporting.
#[derive(Debug, Error)]
#[error("no restart converged ({attempts} attempts); best residual {best_residual:e}")]
pub struct MultiStartError {
    pub attempts: usize,
    pub best_residual: f64,
    pub best: Option<Box<SolveResult>>,
    pub failures: Vec<String>,
}

/// The outcome of every restart, in restart order.
#[derive(Debug)]
pub struct MultiStartRuns {
    pub runs: Vec<std::result::Result<SolveResult, String>>,
}

/// Seed of restart k.
pub fn restart_seed(config: &SolverConfig, k: usize) -> u64 {
    config.seed.wrapping_add(k as u64)
}

/// Runs every restart (concurrently when threads are available) and returns
/// them in restart order.
pub fn run_restarts(problem: &Problem, config: &SolverConfig) -> Result<MultiStartRuns> {
    config.validate()?;
    let runs = (0..config.restarts)
        .into_par_iter()
        .map(|k| {
            let seed = restart_seed(config, k);
            let attempt = initial_estimator(problem, config, seed).and_then(|init| solve_from(problem, config, init));
            match attempt {
                Ok(mut r) => {
                    r.restart_index = k;
                    r.seed = seed;
                    if r.converged {
                        let report = face_inequality_check(problem, &r.estimator)?;
                        if !report.passed(FACE_INEQUALITY_TOLERANCE) {
                            r.diagnostics.rejected = Some(format!(
                                "face inequality violated (min margin {:e})",
                                report.min_margin
                            ));
                        }
                    }
                    Ok(Ok(r))
                }
                Err(e) => Ok(Err(e.to_string())),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiStartRuns { runs })
}

/// Lowest-I₁ converged, non-rejected restart; ties go to the smaller restart index.
pub fn multi_start(problem: &Problem, config: &SolverConfig) -> std::result::Result<SolveResult, MultiStartError> {
    let runs = run_restarts(problem, config).map_err(|e| MultiStartError {
        attempts: 0,
        best_residual: f64::INFINITY,
        best: None,
        failures: vec![e.to_string()],
    })?;
    select_best(runs)
}

pub fn select_best(runs: MultiStartRuns) -> std::result::Result<SolveResult, MultiStartError> {
    let attempts = runs.runs.len();
    let mut failures = Vec::new();
    let mut best: Option<SolveResult> = None;
    let mut fallback: Option<SolveResult> = None;
    for run in runs.runs {
        match run {
            Err(e) => failures.push(e),
            Ok(r) if r.converged && r.diagnostics.rejected.is_none() => {
                if best.as_ref().is_none_or(|b| r.i1 < b.i1) {
                    best = Some(r);
                }
            }
            Ok(r) => {
                if let Some(why) = &r.diagnostics.rejected {
                    failures.push(format!("restart {}: {why}", r.restart_index));
                } else {
                    failures.push(format!("restart {}: residual {:e}", r.restart_index, r.residual_norm));
                }
                let better = fallback.as_ref().is_none_or(|b| {
                    (r.converged, -r.residual_norm) > (b.converged, -b.residual_norm)
                });
                if better {
                    fallback = Some(r);
                }
            }
        }
    }
    best.ok_or_else(|| MultiStartError {
        attempts,
        best_residual: fallback.as_ref().map_or(f64::INFINITY, |r| r.residual_norm),
        best: fallback.map(Box::new),
        failures,
    })
}
