//! Face deformations of a solved three-cell plane problem: optimality along
//! the flow, orientation of the faces, the flow lemma and the order of the
//! finite differences the formula checks rely on.

use smml::geometry::{face_enumeration, IntegrationOptions};
use smml::models::{ExponentialFamilyModel, PriorSpec};
use smml::solver::multi_start;
use smml::variation::{
    deformed_i1, first_variation_formula, flow_lemma_check, second_variation_formula, FacePartition, Side, TestFunction,
};
use smml::{Estimator, Problem, SolverConfig};

fn setup() -> (Problem, Estimator) {
    let model = ExponentialFamilyModel::isotropic_gaussian(2).unwrap();
    let prior = PriorSpec::gaussian(vec![0.0, 0.0], 1.5).unwrap();
    let p = Problem::new(model, &prior, 1e-12, IntegrationOptions::default()).unwrap();
    let r = multi_start(&p, &SolverConfig { restarts: 2, ..SolverConfig::with_n(3) }).unwrap();
    assert!(r.converged);
    (p, r.estimator)
}

fn faces(p: &Problem, est: &Estimator) -> Vec<(usize, usize)> {
    let f: Vec<(usize, usize)> = face_enumeration(&p.partition(est).unwrap()).iter().map(|f| (f.i, f.j)).collect();
    assert!(!f.is_empty());
    f
}

#[test]
fn solved_estimator_is_a_minimum_along_every_flow() {
    let (p, est) = setup();
    for (i, j) in faces(&p, &est) {
        let fp = FacePartition::solved(&p, &est, i, j).unwrap();
        let i0 = fp.i1().unwrap();
        for spec in fp.random_specs(4, 1).unwrap() {
            let scale = spec.max_step();
            for t in [1e-2, -1e-2, 1e-1, -1e-1] {
                let it = deformed_i1(&fp, &spec, t * scale).unwrap();
                assert!(it >= i0 - 1e-12, "face ({i},{j}), t = {t}·{scale:e}: I1 drops by {:e}", i0 - it);
            }
        }
    }
}

#[test]
fn each_assertion_lies_on_its_own_side_of_every_face() {
    let (p, est) = setup();
    for (i, j) in faces(&p, &est) {
        for (a, b) in [(i, j), (j, i)] {
            let n = FacePartition::solved(&p, &est, a, b).unwrap().normal();
            let (ta, tb) = (est.theta(a), est.theta(b));
            let s = n[0] * (tb[0] - ta[0]) + n[1] * (tb[1] - ta[1]);
            assert!(s > 0.0, "face ({a},{b}): N·(θ{b} − θ{a}) = {s}");
        }
    }
}

#[test]
fn flow_lemma_holds_on_both_sides_for_every_test_function() {
    let (p, est) = setup();
    let (i, j) = faces(&p, &est)[0];
    for fp in [
        FacePartition::solved(&p, &est, i, j).unwrap(),
        FacePartition::perturbed(&p, &est, i, j, 0.05).unwrap(),
    ] {
        let spec = fp.spec(0.2, 0.8, 0.1).unwrap();
        for rho in [TestFunction::One, TestFunction::Coordinate(0), TestFunction::Coordinate(1), TestFunction::Marginal] {
            let a = flow_lemma_check(&fp, &spec, Side::First, rho, None).unwrap();
            let b = flow_lemma_check(&fp, &spec, Side::Second, rho, None).unwrap();
            assert!(a.relative_error() <= 1e-4, "{a:?}");
            assert!(b.relative_error() <= 1e-4, "{b:?}");
            assert!((a.first_formula + b.first_formula).abs() <= 1e-14 * a.scale.max(1.0));
        }
    }
}

/// Halving the step of a central difference cuts its error by about four.
#[test]
fn central_differences_converge_at_second_order() {
    let (p, est) = setup();
    let (i, j) = faces(&p, &est)[0];
    let fp = FacePartition::perturbed(&p, &est, i, j, 0.05).unwrap();
    let spec = fp.spec(0.25, 0.75, 0.1).unwrap();
    let id = first_variation_formula(&fp, &spec).unwrap();
    let idd = second_variation_formula(&fp, &spec).unwrap().idd();
    let i0 = fp.i1().unwrap();
    let errors = |h: f64| {
        let (a, b) = (deformed_i1(&fp, &spec, h).unwrap(), deformed_i1(&fp, &spec, -h).unwrap());
        (((a - b) / (2.0 * h) - id).abs(), ((a - 2.0 * i0 + b) / (h * h) - idd).abs())
    };
    let h = 0.4 * spec.max_step();
    let (e1, e2) = errors(h);
    let (f1, f2) = errors(0.5 * h);
    for (name, ratio) in [("first", e1 / f1), ("second", e2 / f2)] {
        assert!((3.0..=5.0).contains(&ratio), "{name} difference error ratio {ratio} ({e1:e}/{f1:e}, {e2:e}/{f2:e})");
    }
}
