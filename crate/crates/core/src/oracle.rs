//! Brute-force discrete oracle: the data space is replaced by a weighted
//! lattice, each lattice point is coloured with a cell index, and single-point
//! recolourings are made while they lower the discrete expected code length.
//! The partition implied by the resulting assertions can then be compared
//! with the colouring itself.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Estimator, Partition};
use crate::models::{ExponentialFamilyModel, MarginalDensity};

/// Lattice size used when none is configured.
pub const DEFAULT_GRID_POINTS: usize = 12_000;

/// A move must lower I₁ by more than this to be taken.
pub const MOVE_TOL: f64 = 1e-13;

/// A cell-centred lattice over the truncation box with weights ∝ r.
#[derive(Debug, Clone)]
pub struct GridProblem {
    model: ExponentialFamilyModel,
    shape: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    spacing: Vec<f64>,
    /// Row-major, `dimension()` coordinates per point.
    points: Vec<f64>,
    weights: Vec<f64>,
    c_disc: f64,
}

impl GridProblem {
    /// A lattice of exactly `g` points over the marginal's box, with per-axis
    /// counts chosen so the spacing is as close to uniform as `g` allows.
    pub fn new(marginal: &MarginalDensity, g: usize) -> Result<Self> {
        let lengths: Vec<f64> = marginal.box_lo().iter().zip(marginal.box_hi()).map(|(l, h)| h - l).collect();
        let shape = lattice_shape(g, &lengths)?;
        Self::with_shape(marginal, &shape)
    }

    pub fn with_shape(marginal: &MarginalDensity, shape: &[usize]) -> Result<Self> {
        let d = marginal.dimension();
        if shape.len() != d || shape.contains(&0) {
            return Err(Error::param("oracle.grid_points", format!("lattice shape {shape:?} does not fit d = {d}")));
        }
        let lo = marginal.box_lo().to_vec();
        let hi = marginal.box_hi().to_vec();
        let spacing: Vec<f64> = (0..d).map(|k| (hi[k] - lo[k]) / shape[k] as f64).collect();
        let g: usize = shape.iter().product();
        let mut points = Vec::with_capacity(g * d);
        let mut weights = Vec::with_capacity(g);
        let mut idx = vec![0usize; d];
        for _ in 0..g {
            let x: Vec<f64> = (0..d).map(|k| lo[k] + (idx[k] as f64 + 0.5) * spacing[k]).collect();
            weights.push(marginal.eval(&x));
            points.extend_from_slice(&x);
            // last axis fastest
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Domain("marginal density vanishes at a lattice point".into()));
        }
        for w in weights.iter_mut() {
            *w /= total;
        }
        let model = marginal.model().clone();
        let fam = model.family();
        let c_disc = -(0..g).map(|k| weights[k] * fam.log_h(&points[k * d..(k + 1) * d])).sum::<f64>();
        Ok(GridProblem {
            model,
            shape: shape.to_vec(),
            lo,
            hi,
            spacing,
            points,
            weights,
            c_disc,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Largest per-axis spacing.
    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    pub fn box_lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn box_hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn point(&self, k: usize) -> &[f64] {
        let d = self.dimension();
        &self.points[k * d..(k + 1) * d]
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// −Σₖ wₖ log h(xₖ).
    pub fn c_disc(&self) -> f64 {
        self.c_disc
    }

    pub fn model(&self) -> &ExponentialFamilyModel {
        &self.model
    }

    /// q(log q + θ̂·μ(θ̂) − ψ(θ̂)) for a class with mass q and first moment s.
    fn class_term(&self, q: f64, s: &[f64]) -> Result<f64> {
        let mean: Vec<f64> = s.iter().map(|v| v / q).collect();
        Ok(q * (q.ln() + self.model.conjugate(&mean)?))
    }
}

/// Per-axis counts with product exactly `g`, minimizing the spread of
/// log-spacings. Exhaustive over divisors, which is cheap for lattice sizes.
fn lattice_shape(g: usize, lengths: &[f64]) -> Result<Vec<usize>> {
    if g == 0 {
        return Err(Error::param("oracle.grid_points", "must be positive"));
    }
    fn search(rem: usize, lengths: &[f64], cur: &mut Vec<usize>, best: &mut Option<(f64, Vec<usize>)>) {
        if cur.len() + 1 == lengths.len() {
            cur.push(rem);
            let logs: Vec<f64> = cur.iter().zip(lengths).map(|(m, l)| (l / *m as f64).ln()).collect();
            let mean = logs.iter().sum::<f64>() / logs.len() as f64;
            let spread: f64 = logs.iter().map(|v| (v - mean).powi(2)).sum();
            if best.as_ref().is_none_or(|(b, _)| spread < *b) {
                *best = Some((spread, cur.clone()));
            }
            cur.pop();
            return;
        }
        for m in (1..=rem).filter(|m| rem % m == 0) {
            cur.push(m);
            search(rem / m, lengths, cur, best);
            cur.pop();
        }
    }
    let mut best = None;
    search(g, lengths, &mut Vec::new(), &mut best);
    Ok(best.expect("at least one factorization").1)
}

/// A colouring of the lattice with per-class mass and first moment.
#[derive(Debug, Clone, PartialEq)]
pub struct Coloring {
    labels: Vec<usize>,
    n: usize,
    counts: Vec<usize>,
    mass: Vec<f64>,
    /// Row-major n × d.
    moment: Vec<f64>,
}

impl Coloring {
    pub fn new(grid: &GridProblem, labels: Vec<usize>, n: usize) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::param("coloring", format!("{} labels for {} points", labels.len(), grid.len())));
        }
        if let Some(bad) = labels.iter().find(|&&c| c >= n) {
            return Err(Error::param("coloring", format!("label {bad} out of range for n = {n}")));
        }
        let d = grid.dimension();
        let mut c = Coloring {
            labels,
            n,
            counts: vec![0; n],
            mass: vec![0.0; n],
            moment: vec![0.0; n * d],
        };
        for k in 0..grid.len() {
            let i = c.labels[k];
            c.counts[i] += 1;
            c.mass[i] += grid.weight(k);
            for (a, x) in grid.point(k).iter().enumerate() {
                c.moment[i * d + a] += grid.weight(k) * x;
            }
        }
        Ok(c)
    }

    /// Uniformly random labels; the first n points of a random order get
    /// distinct labels so no class starts empty.
    pub fn random(grid: &GridProblem, n: usize, rng: &mut impl Rng) -> Result<Self> {
        if n == 0 || n > grid.len() {
            return Err(Error::param("solver.n", format!("need 1 ≤ n ≤ {} lattice points", grid.len())));
        }
        let mut labels: Vec<usize> = (0..grid.len()).map(|_| rng.random_range(0..n)).collect();
        let mut order: Vec<usize> = (0..grid.len()).collect();
        order.shuffle(rng);
        for (c, &k) in order.iter().take(n).enumerate() {
            labels[k] = c;
        }
        Coloring::new(grid, labels, n)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, k: usize) -> usize {
        self.labels[k]
    }

    pub fn count(&self, i: usize) -> usize {
        self.counts[i]
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.mass[i]
    }

    pub fn moment(&self, i: usize) -> &[f64] {
        let d = self.moment.len() / self.n;
        &self.moment[i * d..(i + 1) * d]
    }

    pub fn empty_classes(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.counts[i] == 0).collect()
    }

    /// Recolours point k, updating the class statistics incrementally.
    pub fn move_point(&mut self, grid: &GridProblem, k: usize, to: usize) {
        let from = self.labels[k];
        if from == to {
            return;
        }
        let d = grid.dimension();
        let w = grid.weight(k);
        self.labels[k] = to;
        self.counts[from] -= 1;
        self.counts[to] += 1;
        self.mass[from] -= w;
        self.mass[to] += w;
        for (a, x) in grid.point(k).iter().enumerate() {
            self.moment[from * d + a] -= w * x;
            self.moment[to * d + a] += w * x;
        }
        // an emptied class has exactly zero statistics
        if self.counts[from] == 0 {
            self.mass[from] = 0.0;
            self.moment[from * d..(from + 1) * d].fill(0.0);
        }
    }

    /// Largest absolute difference between the incremental statistics and a
    /// recomputation from the labels.
    pub fn statistics_drift(&self, grid: &GridProblem) -> f64 {
        let fresh = Coloring::new(grid, self.labels.clone(), self.n).expect("labels already validated");
        self.mass
            .iter()
            .zip(&fresh.mass)
            .chain(self.moment.iter().zip(&fresh.moment))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn term(&self, grid: &GridProblem, i: usize) -> Result<f64> {
        if self.counts[i] == 0 {
            return Ok(0.0);
        }
        grid.class_term(self.mass[i], self.moment(i))
    }
}

/// Discrete I₁ = C_disc − Σᵢ qᵢ(log qᵢ + θ̂ᵢ·μ(θ̂ᵢ) − ψ(θ̂ᵢ)) with qᵢ and θ̂ᵢ
/// taken from the colour classes.
pub fn discrete_i1(grid: &GridProblem, coloring: &Coloring) -> Result<f64> {
    if let Some(&i) = coloring.empty_classes().first() {
        return Err(Error::EmptyCell { index: i, mass: 0.0 });
    }
    i1_over_nonempty(grid, coloring)
}

fn i1_over_nonempty(grid: &GridProblem, coloring: &Coloring) -> Result<f64> {
    let mut s = 0.0;
    for i in 0..coloring.n() {
        s += coloring.term(grid, i)?;
    }
    Ok(grid.c_disc() - s)
}

/// A class emptied during descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmptiedClass {
    pub sweep: usize,
    pub class: usize,
}

#[derive(Debug, Clone)]
pub struct GreedyResult {
    pub coloring: Coloring,
    /// Discrete I₁ over the nonempty classes.
    pub i1: f64,
    pub initial_i1: f64,
    pub moves: usize,
    pub sweeps: usize,
    pub seed: u64,
    pub emptied: Vec<EmptiedClass>,
}

/// Single-point local search from a random colouring: points are visited in
/// a freshly shuffled order each sweep, each is moved to the colour that
/// lowers I₁ the most, and the search stops after a sweep without moves.
pub fn greedy_descent(grid: &GridProblem, n: usize, seed: u64) -> Result<GreedyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Coloring::random(grid, n, &mut rng)?;
    descend_from(grid, start, seed, &mut rng)
}

/// Runs the descent from a given colouring; `rng` drives the sweep order.
pub fn descend_from(grid: &GridProblem, mut coloring: Coloring, seed: u64, rng: &mut impl Rng) -> Result<GreedyResult> {
    let n = coloring.n();
    let d = grid.dimension();
    let initial_i1 = i1_over_nonempty(grid, &coloring)?;
    let mut terms: Vec<f64> = (0..n).map(|i| coloring.term(grid, i)).collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..grid.len()).collect();
    let mut moves = 0;
    let mut sweeps = 0;
    let mut emptied = Vec::new();
    let mut shifted = vec![0.0; d];
    loop {
        sweeps += 1;
        order.shuffle(rng);
        let mut moved = false;
        for &k in &order {
            let a = coloring.label(k);
            let w = grid.weight(k);
            let x = grid.point(k);
            // class a without point k
            let a_term = if coloring.count(a) == 1 {
                0.0
            } else {
                for (v, (s, xv)) in shifted.iter_mut().zip(coloring.moment(a).iter().zip(x)) {
                    *v = s - w * xv;
                }
                grid.class_term(coloring.mass(a) - w, &shifted)?
            };
            let mut best: Option<(usize, f64, f64)> = None;
            for b in (0..n).filter(|&b| b != a) {
                for (v, (s, xv)) in shifted.iter_mut().zip(coloring.moment(b).iter().zip(x)) {
                    *v = s + w * xv;
                }
                let b_term = grid.class_term(coloring.mass(b) + w, &shifted)?;
                // ΔI₁ = −Δ(Σ terms)
                let delta = (terms[a] + terms[b]) - (a_term + b_term);
                if delta < -MOVE_TOL && best.is_none_or(|(_, bd, _)| delta < bd) {
                    best = Some((b, delta, b_term));
                }
            }
            if let Some((b, _, b_term)) = best {
                if coloring.count(a) == 1 {
                    emptied.push(EmptiedClass { sweep: sweeps, class: a });
                }
                coloring.move_point(grid, k, b);
                terms[b] = b_term;
                // recompute from the updated statistics so terms track them exactly
                terms[a] = coloring.term(grid, a)?;
                moves += 1;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    let i1 = i1_over_nonempty(grid, &coloring)?;
    Ok(GreedyResult {
        coloring,
        i1,
        initial_i1,
        moves,
        sweeps,
        seed,
        emptied,
    })
}

/// Coding probabilities and assertions of the nonempty colour classes,
/// together with the class index each estimator row came from.
pub fn estimator_from_coloring(grid: &GridProblem, coloring: &Coloring) -> Result<(Estimator, Vec<usize>)> {
    let classes: Vec<usize> = (0..coloring.n()).filter(|&i| coloring.count(i) > 0).collect();
    let mut thetas: Vec<DVector<f64>> = Vec::with_capacity(classes.len());
    let mut weights = Vec::with_capacity(classes.len());
    for &i in &classes {
        let q = coloring.mass(i);
        let mean: Vec<f64> = coloring.moment(i).iter().map(|s| s / q).collect();
        thetas.push(grid.model().mu_inverse(&mean)?);
        weights.push(q);
    }
    Ok((Estimator::from_weights(thetas, weights)?, classes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// Weight fraction of lattice points whose colour differs from the cell
    /// of the predicted partition containing them.
    pub mismatch_fraction: f64,
    pub mismatched_points: usize,
    /// Predicted cell of every lattice point, as a colour index.
    pub predicted: Vec<usize>,
}

/// Compares a colouring with the argmax partition of its own assertions.
pub fn theorem_match(grid: &GridProblem, coloring: &Coloring) -> Result<MatchReport> {
    let (est, classes) = estimator_from_coloring(grid, coloring)?;
    let partition = Partition::build(&est, grid.model(), grid.box_lo(), grid.box_hi())?;
    let mut mismatch = 0.0;
    let mut mismatched_points = 0;
    let mut predicted = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let p = classes[partition.assign(grid.point(k))];
        if p != coloring.label(k) {
            mismatch += grid.weight(k);
            mismatched_points += 1;
        }
        predicted.push(p);
    }
    Ok(MatchReport {
        mismatch_fraction: mismatch,
        mismatched_points,
        predicted,
    })
}

/// The best (lowest-I₁) of several seeded descents.
pub fn best_of_seeds(grid: &GridProblem, n: usize, seeds: &[u64]) -> Result<GreedyResult> {
    let mut best: Option<GreedyResult> = None;
    for &s in seeds {
        let r = greedy_descent(grid, n, s)?;
        if best.as_ref().is_none_or(|b| r.i1 < b.i1) {
            best = Some(r);
        }
    }
    best.ok_or_else(|| Error::param("oracle.seeds", "at least one seed is required"))
}

/// Richardson estimate of the lattice error in the discrete I₁: the descent is
/// repeated on a lattice with every per-axis count halved, and the O(h²)
/// difference is extrapolated.
#[derive(Debug, Clone)]
pub struct DiscretizationEstimate {
    pub fine: GreedyResult,
    pub coarse_i1: f64,
    pub spacing_ratio: f64,
    pub error: f64,
}

pub fn discretization_estimate(marginal: &MarginalDensity, fine: &GridProblem, n: usize, seeds: &[u64]) -> Result<DiscretizationEstimate> {
    let coarse_shape: Vec<usize> = fine.shape().iter().map(|m| (m / 2).max(1)).collect();
    let coarse = GridProblem::with_shape(marginal, &coarse_shape)?;
    let f = best_of_seeds(fine, n, seeds)?;
    let c = best_of_seeds(&coarse, n, seeds)?;
    let ratio = coarse.max_spacing() / fine.max_spacing();
    let error = (f.i1 - c.i1).abs() / (ratio * ratio - 1.0);
    Ok(DiscretizationEstimate {
        fine: f,
        coarse_i1: c.i1,
        spacing_ratio: ratio,
        error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{PriorSpec, DEFAULT_EPS_TRUNC};

    fn gaussian(d: usize, s0: f64) -> MarginalDensity {
        let model = ExponentialFamilyModel::isotropic_gaussian(d).unwrap();
        let prior = PriorSpec::gaussian(vec![0.0; d], s0).unwrap();
        MarginalDensity::new(&model, &prior, DEFAULT_EPS_TRUNC).unwrap()
    }

    #[test]
    fn lattice_has_exact_size_and_unit_weight() {
        let m = gaussian(2, 3.0);
        let g = GridProblem::new(&m, 12_000).unwrap();
        assert_eq!(g.len(), 12_000);
        assert_eq!(g.shape(), &[100, 120]);
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(g.weights().iter().all(|w| *w > 0.0));
    }

    #[test]
    fn shape_follows_box_aspect() {
        assert_eq!(lattice_shape(12, &[3.0, 1.0]).unwrap(), vec![6, 2]);
        assert_eq!(lattice_shape(64, &[1.0, 1.0, 1.0]).unwrap(), vec![4, 4, 4]);
        assert_eq!(lattice_shape(7, &[1.0]).unwrap(), vec![7]);
    }

    #[test]
    fn single_class_matches_closed_form() {
        let m = gaussian(1, 2.0);
        let g = GridProblem::new(&m, 301).unwrap();
        let c = Coloring::new(&g, vec![0; 301], 1).unwrap();
        let mean: f64 = (0..g.len()).map(|k| g.weight(k) * g.point(k)[0]).sum();
        // θ̂ = mean, θ̂·μ − ψ = mean²/2, log q = 0
        let expected = g.c_disc() - 0.5 * mean * mean;
        assert!((discrete_i1(&g, &c).unwrap() - expected).abs() < 1e-14);
        let r = descend_from(&g, c.clone(), 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(r.moves, 0);
        assert_eq!(r.coloring, c);
        assert_eq!(theorem_match(&g, &c).unwrap().mismatch_fraction, 0.0);
    }

    #[test]
    fn symmetric_two_point_problem() {
        let m = gaussian(1, 1.0);
        let g = GridProblem::with_shape(&m, &[2]).unwrap();
        let c = Coloring::new(&g, vec![0, 1], 2).unwrap();
        let (est, _) = estimator_from_coloring(&g, &c).unwrap();
        assert!((est.q(0) - 0.5).abs() < 1e-15);
        assert!((est.theta(0)[0] - g.point(0)[0]).abs() < 1e-12);
        assert!((est.theta(1)[0] - g.point(1)[0]).abs() < 1e-12);
    }

    #[test]
    fn empty_class_is_an_error() {
        let m = gaussian(1, 1.0);
        let g = GridProblem::new(&m, 10).unwrap();
        let c = Coloring::new(&g, vec![0; 10], 2).unwrap();
        assert!(matches!(discrete_i1(&g, &c), Err(Error::EmptyCell { index: 1, .. })));
    }

    #[test]
    fn every_move_lowers_i1() {
        let m = gaussian(2, 2.0);
        let g = GridProblem::new(&m, 900).unwrap();
        let r = greedy_descent(&g, 3, 11).unwrap();
        assert!(r.i1 < r.initial_i1);
        assert!(r.moves > 0);
        assert!(r.coloring.statistics_drift(&g) < 1e-12);
        let again = greedy_descent(&g, 3, 11).unwrap();
        assert_eq!(again.coloring, r.coloring);
        assert_eq!(again.i1.to_bits(), r.i1.to_bits());
    }
}
