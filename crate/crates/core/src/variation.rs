//! Boundary deformations of a planar face and the first and second variation
//! of I₁ along them (d = 2).
//!
//! A deformation moves a sub-segment D of the face between two cells along the
//! flow of gN, where N is the unit normal out of the first cell and g is a cos²
//! bump on D that does not vary along N. Because N is constant and g is
//! constant along it, the flow is exact: at time t the point of D at arc
//! length s has moved to normal offset t·g(s). The cells of the deformed
//! partition differ from the undeformed ones only by the strip between D and
//! its image, so I₁(t) is the fixed cell integrals plus a tensor
//! Gauss–Legendre integral over that strip.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::polygon::{self, Point2};
use crate::geometry::{face_enumeration, Estimator, FaceGeometry, Partition};
use crate::quadrature::{self, PolygonQuadrature};
use crate::solver::checks::face_bound_term;
use crate::solver::Problem;

/// Composite rule along D.
const FACE_PANELS: usize = 16;
const FACE_ORDER: usize = 10;
/// Rule across the swept strip.
const STRIP_ORDER: usize = 12;
/// Sample lattice per axis used to validate a collar.
const COLLAR_SAMPLES: usize = 13;
/// Random deformations stay where r_B is at least this fraction of its peak
/// on the face; further out the changes in I₁ are below rounding.
const OCCUPIED_FRACTION: f64 = 1e-4;
const OCCUPIED_SAMPLES: usize = 200;
/// Faces shorter than this (relative to the box) are skipped by [`check_solution`].
const MIN_FACE_FRACTION: f64 = 1e-3;

fn dot(a: Point2, b: Point2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn axpy(x: Point2, t: f64, v: Point2) -> Point2 {
    [x[0] + t * v[0], x[1] + t * v[1]]
}

/// Which side of D a flow-lemma integral is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// The cell N points out of; its integrals grow for t > 0.
    First,
    Second,
}

/// Integrands for the flow lemma.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "axis")]
pub enum TestFunction {
    One,
    Coordinate(usize),
    /// The marginal density r.
    Marginal,
}

/// A bump deformation of the face between cells `i` and `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationSpec {
    /// The cell N points out of.
    pub i: usize,
    pub j: usize,
    /// End points of D.
    pub a: Point2,
    pub b: Point2,
    /// Unit normal out of cell `i`.
    pub normal: Point2,
    /// Half-width of the collar around D that the flow may not leave.
    pub collar: f64,
    /// Peak of g, reached at the midpoint of D.
    pub amplitude: f64,
}

impl DeformationSpec {
    pub fn length(&self) -> f64 {
        polygon::norm(polygon::sub(self.b, self.a))
    }

    pub fn tangent(&self) -> Point2 {
        let l = self.length();
        [(self.b[0] - self.a[0]) / l, (self.b[1] - self.a[1]) / l]
    }

    /// The point of D at arc length `s` from `a`.
    pub fn point(&self, s: f64) -> Point2 {
        axpy(self.a, s, self.tangent())
    }

    /// g(s) = amplitude·cos²(π(s/L − ½)) on [0, L], zero outside.
    pub fn bump(&self, s: f64) -> f64 {
        let l = self.length();
        if !(0.0..=l).contains(&s) {
            return 0.0;
        }
        let c = (std::f64::consts::PI * (s / l - 0.5)).cos();
        self.amplitude * c * c
    }

    /// The same deformation seen from the other cell: N → −N, so the flow at
    /// time t equals this one at −t.
    pub fn reversed(&self) -> Self {
        DeformationSpec {
            i: self.j,
            j: self.i,
            normal: [-self.normal[0], -self.normal[1]],
            ..self.clone()
        }
    }

    /// g scaled by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        DeformationSpec {
            amplitude: self.amplitude * k,
            ..self.clone()
        }
    }

    /// Largest |t| the collar admits.
    pub fn max_step(&self) -> f64 {
        self.collar / self.amplitude
    }

    /// ∫_D f(x, g) ds by the composite rule.
    fn face_integral<const K: usize>(&self, f: impl Fn(Point2, f64) -> [f64; K]) -> [f64; K] {
        let (s, w) = quadrature::composite_gauss_legendre(0.0, self.length(), FACE_PANELS, FACE_ORDER);
        let mut out = [0.0; K];
        for (sk, wk) in s.iter().zip(&w) {
            let v = f(self.point(*sk), self.bump(*sk));
            for (o, vi) in out.iter_mut().zip(v) {
                *o += wk * vi;
            }
        }
        out
    }

    /// ∫_D ∫_0^{t g(s)} f(x + nN) dn ds: the integral over the strip swept
    /// between D and its image, signed so that it is negative for t < 0.
    fn strip_integral<const K: usize>(&self, t: f64, f: impl Fn(Point2) -> [f64; K]) -> [f64; K] {
        let (gx, gw) = quadrature::gauss_legendre(STRIP_ORDER);
        let (s, w) = quadrature::composite_gauss_legendre(0.0, self.length(), FACE_PANELS, FACE_ORDER);
        let mut out = [0.0; K];
        for (sk, wk) in s.iter().zip(&w) {
            let height = t * self.bump(*sk);
            if height == 0.0 {
                continue;
            }
            let base = self.point(*sk);
            for (x, v) in gx.iter().zip(&gw) {
                let n = 0.5 * height * (x + 1.0);
                let val = f(axpy(base, n, self.normal));
                for (o, vi) in out.iter_mut().zip(val) {
                    *o += wk * 0.5 * height * v * vi;
                }
            }
        }
        out
    }
}

/// The partition of an estimator's argmax cells with the face between cells
/// `i` and `j` translated by `offset` along N, together with the cell
/// integrals of r_B and the (q, θ̂) the variation formulas use.
#[derive(Debug, Clone)]
pub struct FacePartition<'a> {
    problem: &'a Problem,
    partition: Partition,
    i: usize,
    j: usize,
    normal: Point2,
    /// A point on the untranslated face line.
    origin: Point2,
    offset: f64,
    /// Convex pieces of each cell.
    pieces: Vec<Vec<Vec<Point2>>>,
    mass: Vec<f64>,
    moment: Vec<Point2>,
    error: f64,
    estimator: Estimator,
    face: (Point2, Point2),
}

impl<'a> FacePartition<'a> {
    /// The argmax partition of `est` itself; the formulas use `est` as given.
    pub fn solved(problem: &'a Problem, est: &Estimator, i: usize, j: usize) -> Result<Self> {
        Self::build(problem, est, i, j, 0.0, false)
    }

    /// The face translated by `offset` along N, with q and θ̂ recomputed by
    /// mass and mean matching on the translated cells.
    pub fn perturbed(problem: &'a Problem, est: &Estimator, i: usize, j: usize, offset: f64) -> Result<Self> {
        Self::build(problem, est, i, j, offset, true)
    }

    fn build(problem: &'a Problem, est: &Estimator, i: usize, j: usize, offset: f64, recompute: bool) -> Result<Self> {
        if problem.dimension() != 2 {
            return Err(Error::Unsupported("variation checks are implemented for d = 2 only".into()));
        }
        let partition = problem.partition(est)?;
        let face = face_enumeration(&partition)
            .into_iter()
            .find(|f| (f.i, f.j) == (i.min(j), i.max(j)))
            .ok_or_else(|| Error::param("face", format!("cells {i} and {j} share no face")))?;
        let FaceGeometry::Segment { a, b } = face.geometry else {
            unreachable!("d = 2 faces are segments")
        };
        let flip = if face.i == i { 1.0 } else { -1.0 };
        let normal = [flip * face.normal[0], flip * face.normal[1]];
        let level = dot(normal, a);

        let mut pieces: Vec<Vec<Vec<Point2>>> = partition
            .cells()
            .iter()
            .map(|c| match c.polygon() {
                Some(p) if !c.empty => vec![p.vertices.clone()],
                _ => Vec::new(),
            })
            .collect();
        let mut interface = (a, b);
        if offset != 0.0 {
            // the cell on the far side of the translated line gives up the slab
            let (from, to) = if offset > 0.0 { (j, i) } else { (i, j) };
            let poly = partition.cell(from).polygon().cloned().unwrap_or_default();
            let tag = polygon::EdgeTag::Cell(to);
            let sign = if offset > 0.0 { 1.0 } else { -1.0 };
            let n = [sign * normal[0], sign * normal[1]];
            let c = sign * (level + offset);
            let keep = poly.clip(n, c, tag);
            let give = poly.clip([-n[0], -n[1]], -c, tag);
            interface = chord(&poly.vertices, normal, level + offset)
                .ok_or_else(|| Error::param("offset", "translated face leaves the neighbouring cell"))?;
            pieces[from] = if keep.is_empty() { Vec::new() } else { vec![keep.vertices] };
            if !give.is_empty() {
                pieces[to].push(give.vertices);
            }
        }

        let lo = problem.box_lo();
        let hi = problem.box_hi();
        let quad = PolygonQuadrature::new([lo[0], lo[1]], [hi[0], hi[1]], problem.integration().tolerance);
        let marginal = problem.marginal();
        let mut mass = Vec::with_capacity(pieces.len());
        let mut moment = Vec::with_capacity(pieces.len());
        let mut error = 0.0;
        for cell in &pieces {
            let mut acc = [0.0; 3];
            for piece in cell {
                let e = quadrature::integrate_polygon(
                    piece,
                    &|p: Point2| {
                        let r = marginal.truncated(&p);
                        [r, p[0] * r, p[1] * r]
                    },
                    &quad,
                );
                error += e.error;
                for (s, v) in acc.iter_mut().zip(e.value) {
                    *s += v;
                }
            }
            mass.push(acc[0]);
            moment.push([acc[1], acc[2]]);
        }

        let estimator = if recompute {
            let model = problem.model();
            let thetas = mass
                .iter()
                .zip(&moment)
                .enumerate()
                .map(|(k, (m, s))| {
                    if *m <= 0.0 {
                        return Err(Error::EmptyCell { index: k, mass: *m });
                    }
                    model.mu_inverse(&[s[0] / m, s[1] / m])
                })
                .collect::<Result<Vec<DVector<f64>>>>()?;
            Estimator::from_weights(thetas, mass.clone())?
        } else {
            est.clone()
        };

        Ok(FacePartition {
            problem,
            partition,
            i,
            j,
            normal,
            origin: a,
            offset,
            pieces,
            mass,
            moment,
            error,
            estimator,
            face: interface,
        })
    }

    pub fn problem(&self) -> &Problem {
        self.problem
    }

    pub fn cells(&self) -> (usize, usize) {
        (self.i, self.j)
    }

    /// Unit normal out of cell `i`.
    pub fn normal(&self) -> Point2 {
        self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// End points of the (translated) face between the two cells.
    pub fn face(&self) -> (Point2, Point2) {
        self.face
    }

    pub fn face_length(&self) -> f64 {
        polygon::norm(polygon::sub(self.face.1, self.face.0))
    }

    pub fn estimator(&self) -> &Estimator {
        &self.estimator
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    /// Accumulated quadrature error estimate of the cell integrals.
    pub fn quadrature_error(&self) -> f64 {
        self.error
    }

    /// Convex pieces of cell `k`.
    pub fn pieces(&self, k: usize) -> &[Vec<Point2>] {
        &self.pieces[k]
    }

    /// The cell containing `x`.
    pub fn owner(&self, x: Point2) -> usize {
        let k = self.partition.assign(&x);
        let n = dot(self.normal, polygon::sub(x, self.origin));
        if self.offset > 0.0 && k == self.j && n < self.offset {
            self.i
        } else if self.offset < 0.0 && k == self.i && n > self.offset {
            self.j
        } else {
            k
        }
    }

    /// Σ Mₖ(log Mₖ + φ(Sₖ/Mₖ)) over the given cells, with φ the convex
    /// conjugate of ψ.
    fn class_terms(&self, cells: &[(f64, Point2)]) -> Result<f64> {
        let model = self.problem.model();
        let mut s = 0.0;
        for (k, (m, mo)) in cells.iter().enumerate() {
            if *m <= 0.0 {
                return Err(Error::EmptyCell { index: k, mass: *m });
            }
            s += m * (m.ln() + model.conjugate(&[mo[0] / m, mo[1] / m])?);
        }
        Ok(s)
    }

    /// C − Σ Mₖ(log Mₖ + φ(Sₖ/Mₖ)) from the cell masses M and moments S.
    fn closed_form(&self, mass: &[f64], moment: &[Point2]) -> Result<f64> {
        let cells: Vec<(f64, Point2)> = mass.iter().copied().zip(moment.iter().copied()).collect();
        Ok(self.problem.constant() - self.class_terms(&cells)?)
    }

    /// I₁ of this partition with q and θ̂ matched to its cells.
    pub fn i1(&self) -> Result<f64> {
        self.closed_form(&self.mass, &self.moment)
    }

    /// A spec on the part of the face between fractions `s0 < s1` of its length.
    pub fn spec(&self, s0: f64, s1: f64, collar: f64) -> Result<DeformationSpec> {
        if !(0.0 <= s0 && s0 < s1 && s1 <= 1.0) {
            return Err(Error::param("segment", "need 0 ≤ s0 < s1 ≤ 1"));
        }
        let (p, q) = self.face;
        let spec = DeformationSpec {
            i: self.i,
            j: self.j,
            a: polygon::lerp(p, q, s0),
            b: polygon::lerp(p, q, s1),
            normal: self.normal,
            collar,
            amplitude: 1.0,
        };
        self.validate(&spec)?;
        Ok(spec)
    }

    /// Checks that `spec` sits on this face and that its collar lies inside
    /// the two cells (first cell below D, second above) and inside B.
    pub fn validate(&self, spec: &DeformationSpec) -> Result<()> {
        let bad = |why: &str| Err(Error::param("deformation", why.to_string()));
        let forward = (spec.i, spec.j) == (self.i, self.j);
        if !forward && (spec.i, spec.j) != (self.j, self.i) {
            return bad("cells do not match the face");
        }
        let sign = if forward { 1.0 } else { -1.0 };
        if (dot(spec.normal, self.normal) - sign).abs() > 1e-12 {
            return bad("normal does not match the face");
        }
        if !(spec.collar > 0.0 && spec.amplitude >= 0.0 && spec.amplitude.is_finite()) {
            return bad("collar must be positive and amplitude non-negative");
        }
        let scale = 1.0 + self.face_length();
        let len = spec.length();
        if !(len > 0.0) {
            return bad("D has zero length");
        }
        let level = dot(self.normal, self.origin) + self.offset;
        let (p, q) = self.face;
        let along = |x: Point2| dot(polygon::sub(x, p), polygon::sub(q, p)) / self.face_length().powi(2);
        for x in [spec.a, spec.b] {
            if (dot(self.normal, x) - level).abs() > 1e-9 * scale {
                return bad("D is not on the face line");
            }
            if !(-1e-12..=1.0 + 1e-12).contains(&along(x)) {
                return bad("D extends past the face");
            }
        }
        let t = spec.tangent();
        let m = COLLAR_SAMPLES - 1;
        for u in 0..=m {
            for v in 0..=m {
                let s = len * u as f64 / m as f64;
                let n = spec.collar * (2.0 * v as f64 / m as f64 - 1.0);
                if n.abs() < 1e-9 * spec.collar {
                    continue;
                }
                let x = axpy(axpy(spec.a, s, t), n, spec.normal);
                if !self.partition.in_box(&x) {
                    return bad("collar leaves the truncation box");
                }
                let want = if n < 0.0 { spec.i } else { spec.j };
                if self.owner(x) != want {
                    return bad("collar reaches a third cell");
                }
            }
        }
        Ok(())
    }

    /// The sub-interval of the face, as fractions of its length, where r_B is
    /// at least `OCCUPIED_FRACTION` of its maximum on the face.
    pub fn occupied(&self) -> (f64, f64) {
        let marginal = self.problem.marginal();
        let (p, q) = self.face;
        let r: Vec<f64> = (0..=OCCUPIED_SAMPLES)
            .map(|k| marginal.truncated(&polygon::lerp(p, q, k as f64 / OCCUPIED_SAMPLES as f64)))
            .collect();
        let peak = r.iter().copied().fold(0.0, f64::max);
        let inside: Vec<usize> = (0..=OCCUPIED_SAMPLES).filter(|&k| r[k] >= OCCUPIED_FRACTION * peak).collect();
        let frac = |k: usize| k as f64 / OCCUPIED_SAMPLES as f64;
        (frac(inside[0]), frac(*inside.last().unwrap()))
    }

    /// `count` random specs on this face: D covers a random middle part of
    /// the occupied stretch of the face and the collar is shrunk until it fits.
    pub fn random_specs(&self, count: usize, seed: u64) -> Result<Vec<DeformationSpec>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (u0, u1) = self.occupied();
        let (u0, u1) = (u0.max(0.05), u1.min(0.95));
        let span = u1 - u0;
        if span <= 0.0 {
            return Err(Error::param("deformation", "face carries no mass"));
        }
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0;
        while out.len() < count {
            attempts += 1;
            if attempts > 50 * count.max(1) {
                return Err(Error::param("deformation", "no admissible collar found on this face"));
            }
            let c = u0 + span * rng.random_range(0.3..0.7);
            let half = span * rng.random_range(0.08..0.2);
            let mut collar = rng.random_range(0.3..1.0) * half * self.face_length();
            for _ in 0..8 {
                if let Ok(s) = self.spec(c - half, c + half, collar) {
                    out.push(s);
                    break;
                }
                collar *= 0.5;
            }
        }
        Ok(out)
    }

    fn check_step(&self, spec: &DeformationSpec, t: f64) -> Result<()> {
        if t.abs() * spec.amplitude >= spec.collar {
            return Err(Error::param("t", "flow displacement leaves the collar"));
        }
        Ok(())
    }

    /// ∫ r_B·(1, x) over the strip swept by the flow up to time t.
    fn swept(&self, spec: &DeformationSpec, t: f64) -> [f64; 3] {
        let marginal = self.problem.marginal();
        spec.strip_integral(t, |p| {
            let r = marginal.truncated(&p);
            [r, p[0] * r, p[1] * r]
        })
    }

    /// λₖ(x) = log qₖ + x·θ̂ₖ − ψ(θ̂ₖ) for the formulas' estimator.
    fn lambda(&self, k: usize, x: Point2) -> Result<f64> {
        self.estimator.lambda(self.problem.model(), k, &x)
    }
}

/// The intersection of the line N·x = level with a convex polygon, ordered
/// along the tangent (−N₂, N₁).
fn chord(poly: &[Point2], normal: Point2, level: f64) -> Option<(Point2, Point2)> {
    let n = poly.len();
    let mut hits = Vec::new();
    for k in 0..n {
        let p = poly[k];
        let q = poly[(k + 1) % n];
        let sp = dot(normal, p) - level;
        let sq = dot(normal, q) - level;
        if (sp < 0.0) != (sq < 0.0) {
            hits.push(polygon::lerp(p, q, sp / (sp - sq)));
        }
    }
    let t = [-normal[1], normal[0]];
    let lo = hits.iter().copied().min_by(|a, b| dot(t, *a).total_cmp(&dot(t, *b)))?;
    let hi = hits.iter().copied().max_by(|a, b| dot(t, *a).total_cmp(&dot(t, *b)))?;
    (polygon::norm(polygon::sub(hi, lo)) > 0.0).then_some((lo, hi))
}

/// Cell masses and moments after flowing for time t.
fn deformed_integrals(fp: &FacePartition, spec: &DeformationSpec, t: f64) -> (Vec<f64>, Vec<Point2>) {
    let sw = fp.swept(spec, t);
    let mut mass = fp.mass.clone();
    let mut moment = fp.moment.clone();
    mass[spec.i] += sw[0];
    mass[spec.j] -= sw[0];
    for a in 0..2 {
        moment[spec.i][a] += sw[a + 1];
        moment[spec.j][a] -= sw[a + 1];
    }
    (mass, moment)
}

/// I₁ of the partition after flowing for time t, with q and θ̂ matched to the
/// deformed cells.
pub fn deformed_i1(fp: &FacePartition, spec: &DeformationSpec, t: f64) -> Result<f64> {
    fp.validate(spec)?;
    fp.check_step(spec, t)?;
    if t == 0.0 {
        return fp.i1();
    }
    let (mass, moment) = deformed_integrals(fp, spec, t);
    fp.closed_form(&mass, &moment)
}

/// I₁(t) − I₁(0) from the two cells the flow changes, which avoids
/// cancelling against C and the untouched cells.
fn deformed_change(fp: &FacePartition, spec: &DeformationSpec, t: f64) -> Result<f64> {
    fp.check_step(spec, t)?;
    let (mass, moment) = deformed_integrals(fp, spec, t);
    let pick = |m: &[f64], s: &[Point2]| [spec.i, spec.j].map(|k| (m[k], s[k]));
    let after = fp.class_terms(&pick(&mass, &moment))?;
    let before = fp.class_terms(&pick(&fp.mass, &fp.moment))?;
    Ok(before - after)
}

/// İ at t = 0: −∫_D r g (λ₁ − λ₂) ds, with 1 = `spec.i`.
pub fn first_variation_formula(fp: &FacePartition, spec: &DeformationSpec) -> Result<f64> {
    fp.validate(spec)?;
    let marginal = fp.problem.marginal();
    let (th1, th2) = (fp.estimator.theta(spec.i), fp.estimator.theta(spec.j));
    // λ₁ − λ₂ is affine: x·(θ̂₁ − θ̂₂) + c
    let c = fp.lambda(spec.i, [0.0, 0.0])? - fp.lambda(spec.j, [0.0, 0.0])?;
    let [v] = spec.face_integral(|x, g| {
        let dl = x[0] * (th1[0] - th2[0]) + x[1] * (th1[1] - th2[1]) + c;
        [marginal.truncated(&x) * g * dl]
    });
    Ok(-v)
}

/// The four terms whose sum is −Ï at t = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondVariationTerms {
    /// ∫_D (λ₁ − λ₂) g ∇·(g r N) ds.
    pub divergence: f64,
    /// (1/q₁ + 1/q₂)(∫_D g r ds)².
    pub mass: f64,
    /// δ₁·Q₁⁻¹δ₁/q₁ + δ₂·Q₂⁻¹δ₂/q₂ with δᵢ = ∫_D (x − μ(θ̂ᵢ)) g r ds.
    pub moment: f64,
    /// ∫_D g² r N·(θ̂₁ − θ̂₂) ds.
    pub normal_jump: f64,
}

impl SecondVariationTerms {
    pub fn idd(&self) -> f64 {
        -(self.divergence + self.mass + self.moment + self.normal_jump)
    }
}

/// Ï at t = 0 term by term. Since g is constant along N and N is constant,
/// ∇·(g r N) = g N·∇r.
pub fn second_variation_formula(fp: &FacePartition, spec: &DeformationSpec) -> Result<SecondVariationTerms> {
    fp.validate(spec)?;
    let model = fp.problem.model();
    let marginal = fp.problem.marginal();
    let est = &fp.estimator;
    let (i, j) = (spec.i, spec.j);
    let n = spec.normal;
    let th1 = est.theta(i);
    let th2 = est.theta(j);
    let jump = n[0] * (th1[0] - th2[0]) + n[1] * (th1[1] - th2[1]);
    let mu1 = model.grad_psi(th1.as_slice())?;
    let mu2 = model.grad_psi(th2.as_slice())?;
    // offsets of λ₁ − λ₂ = x·(θ̂₁ − θ̂₂) + c
    let c = fp.lambda(i, [0.0, 0.0])? - fp.lambda(j, [0.0, 0.0])?;
    let scale = 1.0 / marginal.mass();
    let [div, gr, g2r, d1x, d1y, d2x, d2y] = spec.face_integral(|x, g| {
        let r = marginal.truncated(&x);
        let grad = marginal.gradient(&x);
        let dn = scale * (n[0] * grad[0] + n[1] * grad[1]);
        let dl = x[0] * (th1[0] - th2[0]) + x[1] * (th1[1] - th2[1]) + c;
        [
            dl * g * g * dn,
            g * r,
            g * g * r,
            (x[0] - mu1[0]) * g * r,
            (x[1] - mu1[1]) * g * r,
            (x[0] - mu2[0]) * g * r,
            (x[1] - mu2[1]) * g * r,
        ]
    });
    let (q1, q2) = (est.q(i), est.q(j));
    let quad_form = |theta: &DVector<f64>, delta: [f64; 2]| -> Result<f64> {
        let h = model.hess_psi(theta.as_slice())?;
        let v = DVector::from_column_slice(&delta);
        let ch = h
            .cholesky()
            .ok_or_else(|| Error::Domain("Hess ψ is not positive definite".into()))?;
        Ok(v.dot(&ch.solve(&v)))
    };
    Ok(SecondVariationTerms {
        divergence: div,
        mass: (1.0 / q1 + 1.0 / q2) * gr * gr,
        moment: quad_form(th1, [d1x, d1y])? / q1 + quad_form(th2, [d2x, d2y])? / q2,
        normal_jump: g2r * jump,
    })
}

/// Formula and finite-difference values of İ and Ï at t = 0 for one spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationReport {
    pub spec: DeformationSpec,
    pub id_formula: f64,
    /// Richardson extrapolation of the central differences at both steps.
    pub id_numeric: f64,
    /// |D(t/2) − D(t)|/3.
    pub id_error: f64,
    pub idd_formula: f64,
    pub idd_numeric: f64,
    pub idd_error: f64,
    pub terms: SecondVariationTerms,
    /// The two step sizes t and t/2.
    pub steps: [f64; 2],
    pub i1: f64,
    pub quadrature_error: f64,
    /// ∫_D r g ds·‖θ̂₁ − θ̂₂‖·|D|: the size of İ when D sits a distance |D|
    /// off the bisector. İ below `STATIONARY_FRACTION` of it counts as zero.
    pub id_scale: f64,
}

/// İ values smaller than this fraction of `id_scale` are treated as zero.
pub const STATIONARY_FRACTION: f64 = 1e-6;

impl VariationReport {
    /// |formula − numeric| / max(|numeric|, floor).
    pub fn id_relative_error(&self, floor: f64) -> f64 {
        (self.id_formula - self.id_numeric).abs() / self.id_numeric.abs().max(floor)
    }

    /// Relative İ discrepancy with the stationarity floor applied.
    pub fn id_discrepancy(&self) -> f64 {
        self.id_relative_error(STATIONARY_FRACTION * self.id_scale)
    }

    /// The deformation does not change I₁ to first order.
    pub fn stationary(&self) -> bool {
        self.id_numeric.abs() <= STATIONARY_FRACTION * self.id_scale
    }

    pub fn idd_relative_error(&self, floor: f64) -> f64 {
        (self.idd_formula - self.idd_numeric).abs() / self.idd_numeric.abs().max(floor)
    }
}

/// Default step: the bump moves D by at most this fraction of its length.
const STEP_FRACTION: f64 = 0.02;

/// Evaluates both formulas and their finite-difference counterparts. The
/// default step keeps the swept strip thin relative to |D| and inside half
/// the collar.
pub fn variation_report(fp: &FacePartition, spec: &DeformationSpec, step: Option<f64>) -> Result<VariationReport> {
    fp.validate(spec)?;
    let t = step.unwrap_or((0.5 * spec.max_step()).min(STEP_FRACTION * spec.length() / spec.amplitude));
    fp.check_step(spec, t)?;
    let i0 = fp.i1()?;
    let at = |h: f64| -> Result<(f64, f64)> {
        let p = deformed_change(fp, spec, h)?;
        let m = deformed_change(fp, spec, -h)?;
        Ok(((p - m) / (2.0 * h), (p + m) / (h * h)))
    };
    let (d1, dd1) = at(t)?;
    let (d2, dd2) = at(0.5 * t)?;
    let terms = second_variation_formula(fp, spec)?;
    let marginal = fp.problem.marginal();
    let [gr] = spec.face_integral(|x, g| [g * marginal.truncated(&x)]);
    let gap = (fp.estimator.theta(spec.i) - fp.estimator.theta(spec.j)).norm();
    Ok(VariationReport {
        spec: spec.clone(),
        id_formula: first_variation_formula(fp, spec)?,
        id_numeric: d2 + (d2 - d1) / 3.0,
        id_error: (d2 - d1).abs() / 3.0,
        idd_formula: terms.idd(),
        idd_numeric: dd2 + (dd2 - dd1) / 3.0,
        idd_error: (dd2 - dd1).abs() / 3.0,
        terms,
        steps: [t, 0.5 * t],
        i1: i0,
        quadrature_error: fp.error,
        id_scale: gr * gap * spec.length(),
    })
}

/// First and second t-derivatives of c(t) = ∫_{Uₖ(t)} ρ dx, by the surface
/// formulas and by five-point differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowLemmaReport {
    pub side: Side,
    pub rho: TestFunction,
    pub step: f64,
    pub c0: f64,
    /// ±∫_D g ρ ds.
    pub first_formula: f64,
    pub first_numeric: f64,
    /// ±∫_D g ∇·(g ρ N) ds.
    pub second_formula: f64,
    pub second_numeric: f64,
    /// ∫_D g |ρ| ds: the size of the first derivative when ρ does not
    /// change sign.
    pub scale: f64,
    pub length: f64,
}

impl FlowLemmaReport {
    /// Worst relative discrepancy. The second derivative is measured against
    /// max(|c″|, scale/L) because it vanishes identically for ρ ≡ 1.
    pub fn relative_error(&self) -> f64 {
        let e1 = (self.first_formula - self.first_numeric).abs() / self.first_formula.abs().max(self.scale);
        let s2 = self.second_formula.abs().max(self.scale / self.length);
        let e2 = (self.second_formula - self.second_numeric).abs() / s2;
        e1.max(e2)
    }
}

/// Compares c′(0), c″(0) for c(t) = ∫ ρ over the deformed first or second
/// cell with the surface integrals ±∫_D gρ and ±∫_D g∇·(gρN).
pub fn flow_lemma_check(fp: &FacePartition, spec: &DeformationSpec, side: Side, rho: TestFunction, step: Option<f64>) -> Result<FlowLemmaReport> {
    fp.validate(spec)?;
    let h = step.unwrap_or((0.25 * spec.max_step()).min(0.5 * STEP_FRACTION * spec.length() / spec.amplitude));
    fp.check_step(spec, 2.0 * h)?;
    if let TestFunction::Coordinate(k) = rho {
        if k >= 2 {
            return Err(Error::param("rho", "coordinate index out of range"));
        }
    }
    let marginal = fp.problem.marginal();
    let value = |x: Point2| match rho {
        TestFunction::One => 1.0,
        TestFunction::Coordinate(k) => x[k],
        TestFunction::Marginal => marginal.eval(&x),
    };
    let gradient = |x: Point2| -> Point2 {
        match rho {
            TestFunction::One => [0.0, 0.0],
            TestFunction::Coordinate(k) => {
                let mut e = [0.0, 0.0];
                e[k] = 1.0;
                e
            }
            TestFunction::Marginal => {
                let g = marginal.gradient(&x);
                [g[0], g[1]]
            }
        }
    };
    let (cell, sign) = match side {
        Side::First => (spec.i, 1.0),
        Side::Second => (spec.j, -1.0),
    };
    let lo = fp.problem.box_lo();
    let hi = fp.problem.box_hi();
    // the tolerance is calibrated for a unit-mass density; ρ = 1 and ρ = xₖ
    // integrate to the box area (times |x|), and an unscaled tolerance would
    // sit below their rounding error
    let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    let rho_size = match rho {
        TestFunction::One => area,
        TestFunction::Coordinate(k) => area * lo[k].abs().max(hi[k].abs()),
        TestFunction::Marginal => 1.0,
    };
    let quad = PolygonQuadrature::new([lo[0], lo[1]], [hi[0], hi[1]], fp.problem.integration().tolerance * rho_size.max(1.0));
    let c0: f64 = fp
        .pieces(cell)
        .iter()
        .map(|p| quadrature::integrate_polygon(p, &|x: Point2| [value(x)], &quad).value[0])
        .sum();
    let c = |t: f64| c0 + sign * spec.strip_integral(t, |x| [value(x)])[0];
    let (m2, m1, p1, p2) = (c(-2.0 * h), c(-h), c(h), c(2.0 * h));
    let first_numeric = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
    let second_numeric = (-m2 + 16.0 * m1 - 30.0 * c0 + 16.0 * p1 - p2) / (12.0 * h * h);
    let n = spec.normal;
    let [f1, f2, scale] = spec.face_integral(|x, g| [g * value(x), g * g * dot(n, gradient(x)), g * value(x).abs()]);
    Ok(FlowLemmaReport {
        side,
        rho,
        step: h,
        c0,
        first_formula: sign * f1,
        first_numeric,
        second_formula: sign * f2,
        second_numeric,
        scale,
        length: spec.length(),
    })
}

/// The face-lemma bound recovered from the second variation by a narrow bump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeLimit {
    /// Length of D.
    pub width: f64,
    /// [mass + moment terms] / [κ ∫_D g² r ds] with κ = (∫g)²/∫g² = 2L/3.
    pub normalized: f64,
    /// (r/q₁)[1 + (x₀−μ̂₁)·Q₁⁻¹(x₀−μ̂₁)] + (r/q₂)[…] at the centre x₀.
    pub pointwise: f64,
}

/// Evaluates the second-variation inequality for a bump of length `width`
/// centred at fraction `center` of the face. As the width shrinks the
/// normalized value tends to the pointwise face bound.
pub fn spike_limit(fp: &FacePartition, center: f64, width: f64) -> Result<SpikeLimit> {
    let frac = 0.5 * width / fp.face_length();
    let spec = fp.spec(center - frac, center + frac, 0.25 * width)?;
    let terms = second_variation_formula(fp, &spec)?;
    let marginal = fp.problem.marginal();
    let [g2r] = spec.face_integral(|x, g| [g * g * marginal.truncated(&x)]);
    let len = spec.length();
    let kappa = 2.0 * len / 3.0;
    let x0 = spec.point(0.5 * len);
    let pointwise =
        face_bound_term(fp.problem, &fp.estimator, spec.i, &x0)? + face_bound_term(fp.problem, &fp.estimator, spec.j, &x0)?;
    Ok(SpikeLimit {
        width: len,
        normalized: (terms.mass + terms.moment) / (kappa * g2r),
        pointwise,
    })
}

/// Variation reports for `per_face` random specs on every face of a solved
/// estimator's partition.
pub fn check_solution(problem: &Problem, est: &Estimator, per_face: usize, seed: u64) -> Result<Vec<VariationReport>> {
    let part = problem.partition(est)?;
    let extent = problem
        .box_lo()
        .iter()
        .zip(problem.box_hi())
        .map(|(a, b)| b - a)
        .fold(0.0, f64::max);
    let mut out = Vec::new();
    for (k, face) in face_enumeration(&part).into_iter().enumerate() {
        if face.length() < MIN_FACE_FRACTION * extent {
            continue;
        }
        let fp = FacePartition::solved(problem, est, face.i, face.j)?;
        for spec in fp.random_specs(per_face, seed.wrapping_add(k as u64))? {
            out.push(variation_report(&fp, &spec, None)?);
        }
    }
    Ok(out)
}
