//! Partition invariants on random estimators.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smml::geometry::{CellShape, IntegrationOptions};
use smml::models::{ExponentialFamilyModel, PriorSpec};
use smml::solver::continuity_check;
use smml::{Estimator, Partition, Problem};

fn problem(d: usize) -> Problem {
    let model = ExponentialFamilyModel::isotropic_gaussian(d).unwrap();
    let prior = PriorSpec::gaussian(vec![0.0; d], 2.0).unwrap();
    Problem::new(model, &prior, 1e-6, IntegrationOptions::default()).unwrap()
}

fn random_estimator(d: usize, n: usize, seed: u64) -> Estimator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    let q: Vec<f64> = w.iter().map(|v| v / total).collect();
    Estimator::from_rows(&rows, &q).unwrap()
}

fn random_point(p: &Problem, rng: &mut ChaCha8Rng) -> Vec<f64> {
    p.box_lo().iter().zip(p.box_hi()).map(|(l, h)| rng.random_range(*l..*h)).collect()
}

/// λᵢ(x) = log qᵢ + x·θᵢ − ψ(θᵢ), evaluated from ψ directly.
fn lambdas(p: &Problem, est: &Estimator, x: &[f64]) -> Vec<f64> {
    (0..est.n())
        .map(|i| {
            let th = est.theta(i).as_slice();
            let dot: f64 = x.iter().zip(th).map(|(a, b)| a * b).sum();
            est.q(i).ln() + dot - p.model().psi(th).unwrap()
        })
        .collect()
}

/// Index of the largest entry and its margin over the runner-up.
fn top(v: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    let second = (0..v.len()).filter(|&i| i != best).map(|i| v[i]).fold(f64::NEG_INFINITY, f64::max);
    (best, v[best] - second)
}

const TIE: f64 = 1e-9;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn argmax_equals_halfspace_membership(d in 1usize..=2, n in 2usize..=6, seed in any::<u64>()) {
        let p = problem(d);
        let est = random_estimator(d, n, seed);
        let part = p.partition(&est).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut tested = 0;
        while tested < 10_000 {
            let x = random_point(&p, &mut rng);
            let (_, margin) = top(&lambdas(&p, &est, &x));
            if margin < TIE {
                continue;
            }
            tested += 1;
            let a = part.assign(&x);
            for cell in part.cells() {
                prop_assert_eq!(cell.contains(&x, 0.0), cell.index == a, "x = {:?}", x);
            }
        }
    }

    #[test]
    fn cells_are_convex(n in 2usize..=6, seed in any::<u64>()) {
        let p = problem(2);
        let est = random_estimator(2, n, seed);
        let part = p.partition(&est).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        for cell in part.cells().iter().filter(|c| !c.empty) {
            let poly = cell.polygon().unwrap();
            let mut inside = Vec::new();
            let mut tries = 0;
            while inside.len() < 200 && tries < 200_000 {
                tries += 1;
                let x = random_point(&p, &mut rng);
                if cell.contains(&x, 0.0) {
                    inside.push(x);
                }
            }
            for pair in inside.chunks_exact(2) {
                let mid = [0.5 * (pair[0][0] + pair[1][0]), 0.5 * (pair[0][1] + pair[1][1])];
                prop_assert!(cell.contains(&mid, 1e-12));
                prop_assert!(poly.contains(mid, 1e-9));
            }
        }
    }

    #[test]
    fn cells_cover_the_box(d in 1usize..=2, n in 1usize..=6, seed in any::<u64>()) {
        let p = problem(d);
        let est = random_estimator(d, n, seed);
        let part = p.partition(&est).unwrap();
        let volume: f64 = p.box_lo().iter().zip(p.box_hi()).map(|(l, h)| h - l).product();
        let total: f64 = part.cells().iter().map(|c| c.measure().unwrap()).sum();
        prop_assert!((total - volume).abs() <= 1e-9 * volume, "{} vs {}", total, volume);
        let ci = p.cell_integrals(&part).unwrap();
        prop_assert!((ci.total_mass() - 1.0).abs() <= ci.error.max(1e-12) * 10.0, "Σ M = {}", ci.total_mass());
    }

    /// Each polygon is the shadow of one facet of the upper envelope of the
    /// planes y = λᵢ(x): on a lattice, the polygon holding a point is the top
    /// plane there, and every polygon vertex lies on the envelope.
    #[test]
    fn polygons_are_projected_envelope_facets(n in 2usize..=6, seed in any::<u64>()) {
        let p = problem(2);
        let est = random_estimator(2, n, seed);
        let part = p.partition(&est).unwrap();
        let (lo, hi) = (p.box_lo(), p.box_hi());
        let m = 120;
        for a in 0..m {
            for b in 0..m {
                let x = [
                    lo[0] + (a as f64 + 0.5) / m as f64 * (hi[0] - lo[0]),
                    lo[1] + (b as f64 + 0.5) / m as f64 * (hi[1] - lo[1]),
                ];
                let (best, margin) = top(&lambdas(&p, &est, &x));
                if margin < 1e-7 {
                    continue;
                }
                let holders: Vec<usize> = part
                    .cells()
                    .iter()
                    .filter(|c| c.polygon().is_some_and(|poly| !c.empty && poly.contains(x, 0.0)))
                    .map(|c| c.index)
                    .collect();
                prop_assert_eq!(holders, vec![best], "x = {:?}", x);
            }
        }
        for cell in part.cells().iter().filter(|c| !c.empty) {
            let CellShape::Polygon(poly) = &cell.shape else { unreachable!() };
            for v in &poly.vertices {
                let l = lambdas(&p, &est, v);
                let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(l[cell.index] >= max - 1e-9 * (1.0 + max.abs()), "vertex {:?} of cell {}", v, cell.index);
            }
        }
    }

    #[test]
    fn best_code_length_is_the_continuous_envelope(d in 1usize..=2, n in 2usize..=5, seed in any::<u64>()) {
        let p = problem(d);
        let est = random_estimator(d, n, seed);
        let r = continuity_check(&p, &est, 1000, seed).unwrap();
        prop_assert!(r.passed, "{:?}", r);
    }
}

#[test]
fn permuting_assertions_permutes_cells() {
    let p = problem(2);
    let est = random_estimator(2, 5, 11);
    let perm = [3, 0, 4, 1, 2];
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| est.theta(i).iter().copied().collect()).collect();
    let q: Vec<f64> = perm.iter().map(|&i| est.q(i)).collect();
    let permuted = Estimator::from_rows(&rows, &q).unwrap();
    let a = Partition::build(&est, p.model(), p.box_lo(), p.box_hi()).unwrap();
    let b = Partition::build(&permuted, p.model(), p.box_lo(), p.box_hi()).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        let (ma, mb) = (a.cell(i).measure().unwrap(), b.cell(k).measure().unwrap());
        assert!((ma - mb).abs() <= 1e-9 * (1.0 + ma), "cell {i}: {ma} vs {mb}");
    }
}
