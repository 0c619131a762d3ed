//! Necessary conditions at a solved estimator: the face inequality and the
//! continuity of the best code length across faces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::problem::Problem;
use crate::error::Result;
use crate::geometry::{face_enumeration, Estimator, Face, FaceGeometry, Partition};

/// A margin above −this passes.
pub const FACE_INEQUALITY_TOLERANCE: f64 = 1e-8;
/// Sample points per segment face.
pub const FACE_SAMPLES: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceMargin {
    pub i: usize,
    pub j: usize,
    pub samples: usize,
    /// ‖θ̂ᵢ − θ̂ⱼ‖.
    pub lhs: f64,
    /// Largest right-hand side over the samples.
    pub max_rhs: f64,
    pub min_margin: f64,
    pub worst_point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceInequalityReport {
    pub faces: Vec<FaceMargin>,
    /// Minimum over faces; +∞ when there are none.
    pub min_margin: f64,
}

impl FaceInequalityReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.min_margin >= -tolerance
    }
}

/// Points where the inequality is evaluated on a face.
pub fn face_sample_points(face: &Face, samples: usize) -> Vec<Vec<f64>> {
    match &face.geometry {
        FaceGeometry::Point { x } => vec![vec![*x]],
        FaceGeometry::Segment { a, b } => (1..=samples)
            .map(|k| {
                let t = k as f64 / (samples + 1) as f64;
                vec![a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
            })
            .collect(),
        FaceGeometry::Sampled { points, .. } => points.clone(),
    }
}

/// (r(x)/q)[1 + (x − μ̂)·Q⁻¹(x − μ̂)] for one side of a face.
pub(crate) fn face_bound_term(problem: &Problem, est: &Estimator, i: usize, x: &[f64]) -> Result<f64> {
    let model = problem.model();
    let th = est.theta(i).as_slice();
    let mu = model.grad_psi(th)?;
    let q = model.hess_psi(th)?;
    let dx = nalgebra::DVector::from_iterator(x.len(), x.iter().zip(mu.iter()).map(|(a, b)| a - b));
    let quad = match q.clone().cholesky() {
        Some(ch) => dx.dot(&ch.solve(&dx)),
        None => f64::INFINITY,
    };
    Ok(problem.marginal().truncated(x) / est.q(i) * (1.0 + quad))
}

/// Evaluates ‖θ̂ᵢ−θ̂ⱼ‖ ≥ (r/qᵢ)[1+(x−μ̂ᵢ)·Qᵢ⁻¹(x−μ̂ᵢ)] + (r/qⱼ)[…] at sample
/// points of every shared face.
pub fn face_inequality_check(problem: &Problem, est: &Estimator) -> Result<FaceInequalityReport> {
    let part = problem.partition(est)?;
    let mut faces = Vec::new();
    let mut min_margin = f64::INFINITY;
    for face in face_enumeration(&part) {
        let lhs = (est.theta(face.i) - est.theta(face.j)).norm();
        let pts = face_sample_points(&face, FACE_SAMPLES);
        let mut worst = (f64::INFINITY, f64::NEG_INFINITY, Vec::new());
        for x in &pts {
            let rhs = face_bound_term(problem, est, face.i, x)? + face_bound_term(problem, est, face.j, x)?;
            let m = lhs - rhs;
            if m < worst.0 {
                worst = (m, rhs, x.clone());
            }
        }
        min_margin = min_margin.min(worst.0);
        faces.push(FaceMargin {
            i: face.i,
            j: face.j,
            samples: pts.len(),
            lhs,
            max_rhs: worst.1,
            min_margin: worst.0,
            worst_point: worst.2,
        });
    }
    Ok(FaceInequalityReport { faces, min_margin })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub interior_samples: usize,
    /// max |log(q(x) f(x | θ̂(x))) − maxᵢ(log h(x) + λᵢ(x))| over interior samples.
    pub interior_max_error: f64,
    pub face_samples: usize,
    /// max over face samples of |G(x+εN) − G(x−εN)| / (2ε·slope bound).
    pub face_max_jump_ratio: f64,
    pub passed: bool,
}

/// G(x) = maxᵢ(log h(x) + λᵢ(x)).
pub fn best_log_density(problem: &Problem, partition: &Partition, x: &[f64]) -> f64 {
    problem.model().family().log_h(x) + partition.scores().argmax(x).1
}

const CROSSING_STEP: f64 = 1e-7;

/// Checks that the pointwise best code density equals the envelope G at
/// random interior points and that G does not jump across faces.
pub fn continuity_check(problem: &Problem, est: &Estimator, samples: usize, seed: u64) -> Result<ContinuityReport> {
    let part = problem.partition(est)?;
    let model = problem.model();
    let lo = problem.box_lo();
    let hi = problem.box_hi();
    let d = lo.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut interior_max_error = 0.0f64;
    let mut taken = 0;
    while taken < samples {
        let x: Vec<f64> = (0..d).map(|k| lo[k] + (hi[k] - lo[k]) * rng.random::<f64>()).collect();
        let c = part.assign(&x);
        // skip points within rounding distance of a face
        let lc = part.scores().score(c, &x);
        let near_tie = (0..est.n()).any(|j| j != c && (lc - part.scores().score(j, &x)).abs() < 1e-9);
        if near_tie {
            continue;
        }
        taken += 1;
        let lhs = est.q(c).ln() + model.density_unchecked(&x, est.theta(c).as_slice()).ln();
        let g = best_log_density(problem, &part, &x);
        interior_max_error = interior_max_error.max((lhs - g).abs() / (1.0 + g.abs()));
    }

    let mut face_samples = 0;
    let mut face_max_jump_ratio = 0.0f64;
    if d <= 2 {
        for face in face_enumeration(&part) {
            for x in face_sample_points(&face, FACE_SAMPLES) {
                let shift = |s: f64| -> Vec<f64> { x.iter().zip(&face.normal).map(|(a, n)| a + s * n).collect() };
                let (xp, xm) = (shift(CROSSING_STEP), shift(-CROSSING_STEP));
                if !part.in_box(&xp) || !part.in_box(&xm) {
                    continue;
                }
                face_samples += 1;
                let jump = (best_log_density(problem, &part, &xp) - best_log_density(problem, &part, &xm)).abs();
                // slope of each smooth branch along N
                let branch = |k: usize, y: &[f64]| model.family().log_h(y) + part.scores().score(k, y);
                let slope = [face.i, face.j]
                    .iter()
                    .map(|&k| (branch(k, &xp) - branch(k, &xm)).abs() / (2.0 * CROSSING_STEP))
                    .fold(0.0, f64::max);
                let bound = 2.0 * CROSSING_STEP * slope + 1e-9 * (1.0 + branch(face.i, &x).abs());
                face_max_jump_ratio = face_max_jump_ratio.max(jump / bound);
            }
        }
    }
    Ok(ContinuityReport {
        interior_samples: taken,
        interior_max_error,
        face_samples,
        face_max_jump_ratio,
        passed: interior_max_error <= 1e-12 && face_max_jump_ratio <= 1.0 + 1e-6,
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
    fn single_cell_is_vacuous() {
        let p = problem(2, 1.0);
        let est = Estimator::from_rows(&[vec![0.0, 0.0]], &[1.0]).unwrap();
        let r = face_inequality_check(&p, &est).unwrap();
        assert!(r.faces.is_empty());
        assert!(r.passed(0.0));
    }

    #[test]
    fn cramped_pair_fails() {
        // assertions 1e-3 apart straddling the mode, where r is large
        let p = problem(1, 0.2);
        let est = Estimator::from_rows(&[vec![-5e-4], vec![5e-4]], &[0.5, 0.5]).unwrap();
        let r = face_inequality_check(&p, &est).unwrap();
        assert_eq!(r.faces.len(), 1);
        assert!(!r.passed(FACE_INEQUALITY_TOLERANCE));
        // by hand: r(0)/q·(1 + μ²) on both sides with μ = ±5e-4
        let r0 = p.marginal().truncated(&[0.0]);
        let rhs = 2.0 * r0 / 0.5 * (1.0 + 25e-8);
        assert!((r.faces[0].max_rhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn continuity_holds_for_any_estimator() {
        let p = problem(2, 2.0);
        let est = Estimator::from_rows(&[vec![1.0, 0.5], vec![-1.0, 0.2], vec![0.1, -1.5]], &[0.3, 0.3, 0.4]).unwrap();
        let r = continuity_check(&p, &est, 1000, 3).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.interior_samples, 1000);
        assert!(r.face_samples > 0);
    }
}
