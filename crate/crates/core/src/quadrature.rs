//! Numerical integration rules shared by the model, geometry and variation layers.
//!
//! Everything here integrates vector-valued integrands `[f64; K]` so that a
//! mass and a first moment can be accumulated from the same density
//! evaluations.

use crate::geometry::polygon;

/// Result of an integration with a (conservative) absolute error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<const K: usize> {
    pub value: [f64; K],
    pub error: f64,
    /// Set when some subregion hit the depth limit before meeting its tolerance.
    pub unresolved: bool,
}

impl<const K: usize> Estimate<K> {
    pub fn zero() -> Self {
        Estimate {
            value: [0.0; K],
            error: 0.0,
            unresolved: false,
        }
    }

    pub fn accumulate(&mut self, other: &Estimate<K>) {
        add_into(&mut self.value, &other.value);
        self.error += other.error;
        self.unresolved |= other.unresolved;
    }
}

#[inline]
fn add_into<const K: usize>(acc: &mut [f64; K], v: &[f64; K]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

#[inline]
fn max_abs_diff<const K: usize>(a: &[f64; K], b: &[f64; K]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Gauss-Legendre
// ---------------------------------------------------------------------------

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Fixed composite Gauss-Legendre rule on [a, b]: `panels` equal panels with
/// `order` nodes each. Returns (nodes, weights) in the original coordinate.
pub fn composite_gauss_legendre(a: f64, b: f64, panels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * order);
    let mut weights = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (x, w) in gx.iter().zip(&gw) {
            nodes.push(lo + 0.5 * h * (x + 1.0));
            weights.push(0.5 * h * w);
        }
    }
    (nodes, weights)
}

// ---------------------------------------------------------------------------
// Adaptive Gauss-Kronrod (7/15) on intervals
// ---------------------------------------------------------------------------

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<const K: usize, F: Fn(f64) -> [f64; K]>(f: &F, a: f64, b: f64) -> ([f64; K], f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = [0.0; K];
    let mut gauss = [0.0; K];
    let fc = f(c);
    for k in 0..K {
        kron[k] = WGK[7] * fc[k];
        gauss[k] = WG[3] * fc[k];
    }
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        for k in 0..K {
            let s = f1[k] + f2[k];
            kron[k] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[k] += WG[j / 2] * s;
            }
        }
    }
    for k in 0..K {
        kron[k] *= h;
        gauss[k] *= h;
    }
    let err = max_abs_diff(&kron, &gauss);
    (kron, err)
}

/// Adaptive Gauss-Kronrod integration of `f` over [a, b] to absolute
/// tolerance `tol`. Subintervals are processed in a fixed order so the result
/// is deterministic.
pub fn integrate_interval<const K: usize, F>(f: F, a: f64, b: f64, tol: f64) -> Estimate<K>
where
    F: Fn(f64) -> [f64; K],
{
    let mut out = Estimate::zero();
    if b <= a {
        return out;
    }
    let width = b - a;
    let mut stack = vec![(a, b, 0usize)];
    while let Some((lo, hi, depth)) = stack.pop() {
        let (v, e) = gk15(&f, lo, hi);
        let local_tol = tol * (hi - lo) / width;
        if e <= local_tol || depth >= 40 || hi - lo < 1e-13 * width {
            add_into(&mut out.value, &v);
            out.error += e;
            if e > local_tol {
                out.unresolved = true;
            }
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Triangles and polygons
// ---------------------------------------------------------------------------

/// Symmetric 13-point degree-7 rule on triangles (barycentric coordinates,
/// weights normalized to sum to one).
const TRI7_CENTROID_W: f64 = -0.149_570_044_467_681_750_629_711_3;
const TRI7_ORBIT3: [(f64, f64); 2] = [
    (0.260_345_966_079_039_826_926_242_5, 0.175_615_257_433_207_811_753_519_4),
    (0.065_130_102_902_215_811_538_025_91, 0.053_347_235_608_838_491_269_987_29),
];
const TRI7_ORBIT6: (f64, f64, f64) = (
    0.048_690_315_425_316_411_793_021_56,
    0.312_865_496_004_873_861_406_644_5,
    0.077_113_760_890_257_142_265_198_53,
);

/// Quadrature points of the degree-7 rule as (barycentric, weight) pairs.
pub fn triangle_rule() -> Vec<([f64; 3], f64)> {
    let third = 1.0 / 3.0;
    let mut pts = vec![([third, third, third], TRI7_CENTROID_W)];
    for &(a, w) in &TRI7_ORBIT3 {
        let c = 1.0 - 2.0 * a;
        pts.push(([a, a, c], w));
        pts.push(([a, c, a], w));
        pts.push(([c, a, a], w));
    }
    let (a, b, w) = TRI7_ORBIT6;
    let c = 1.0 - a - b;
    for bc in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
        pts.push((bc, w));
    }
    pts
}

thread_local! {
    static TRI7: Vec<([f64; 3], f64)> = triangle_rule();
}

pub type Triangle = [[f64; 2]; 3];

pub fn triangle_area(t: &Triangle) -> f64 {
    0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1])).abs()
}

/// Degree-7 rule applied once to a triangle.
pub fn triangle_once<const K: usize, F>(t: &Triangle, f: &F) -> [f64; K]
where
    F: Fn([f64; 2]) -> [f64; K],
{
    let area = triangle_area(t);
    let mut acc = [0.0; K];
    TRI7.with(|rule| {
        for (bc, w) in rule {
            let p = [
                bc[0] * t[0][0] + bc[1] * t[1][0] + bc[2] * t[2][0],
                bc[0] * t[0][1] + bc[1] * t[1][1] + bc[2] * t[2][1],
            ];
            let v = f(p);
            for k in 0..K {
                acc[k] += w * v[k];
            }
        }
    });
    for a in acc.iter_mut() {
        *a *= area;
    }
    acc
}

fn split4(t: &Triangle) -> [Triangle; 4] {
    let mid = |a: [f64; 2], b: [f64; 2]| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    let m01 = mid(t[0], t[1]);
    let m12 = mid(t[1], t[2]);
    let m20 = mid(t[2], t[0]);
    [
        [t[0], m01, m20],
        [m01, t[1], m12],
        [m20, m12, t[2]],
        [m01, m12, m20],
    ]
}

/// Per-triangle absolute tolerance, as a fraction of the whole-frame tolerance.
const SLIVER_FLOOR: f64 = 1e-6;

/// Options for adaptive polygon quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolygonQuadrature {
    /// Reference rectangle used for background tiling and for scaling the
    /// absolute tolerance into a per-area density.
    pub frame_lo: [f64; 2],
    pub frame_hi: [f64; 2],
    pub tiles_per_axis: usize,
    /// Absolute tolerance for an integral over the whole frame.
    pub tolerance: f64,
    pub max_depth: usize,
}

impl PolygonQuadrature {
    pub fn new(frame_lo: [f64; 2], frame_hi: [f64; 2], tolerance: f64) -> Self {
        PolygonQuadrature {
            frame_lo,
            frame_hi,
            tiles_per_axis: 16,
            tolerance,
            max_depth: 10,
        }
    }

    fn frame_area(&self) -> f64 {
        (self.frame_hi[0] - self.frame_lo[0]) * (self.frame_hi[1] - self.frame_lo[1])
    }
}

/// Adaptive integration over a triangle: the degree-7 rule on the triangle is
/// compared with the rule applied to its four midpoint children. A triangle
/// is accepted once that difference is below `tol_density`·area + `floor`.
pub fn integrate_triangle<const K: usize, F>(t: &Triangle, f: &F, tol_density: f64, floor: f64, max_depth: usize) -> Estimate<K>
where
    F: Fn([f64; 2]) -> [f64; K],
{
    let mut out = Estimate::zero();
    let coarse = triangle_once(t, f);
    refine(t, coarse, f, (tol_density, floor), 0, max_depth, &mut out);
    out
}

fn refine<const K: usize, F>(
    t: &Triangle,
    coarse: [f64; K],
    f: &F,
    (tol_density, floor): (f64, f64),
    depth: usize,
    max_depth: usize,
    out: &mut Estimate<K>,
) where
    F: Fn([f64; 2]) -> [f64; K],
{
    let children = split4(t);
    let vals: [[f64; K]; 4] = [
        triangle_once(&children[0], f),
        triangle_once(&children[1], f),
        triangle_once(&children[2], f),
        triangle_once(&children[3], f),
    ];
    let mut fine = [0.0; K];
    for v in &vals {
        add_into(&mut fine, v);
    }
    let err = max_abs_diff(&coarse, &fine);
    let local_tol = tol_density * triangle_area(t) + floor;
    if err <= local_tol || depth >= max_depth {
        add_into(&mut out.value, &fine);
        out.error += err;
        if err > local_tol {
            out.unresolved = true;
        }
        return;
    }
    for (child, v) in children.iter().zip(vals) {
        refine(child, v, f, (tol_density, floor), depth + 1, max_depth, out);
    }
}

/// Integrates `f` over a convex polygon (counter-clockwise vertex list).
///
/// The polygon is cut against a background tiling of the frame, each piece is
/// fanned into triangles from its centroid, and every triangle is integrated
/// adaptively.
pub fn integrate_polygon<const K: usize, F>(poly: &[[f64; 2]], f: &F, opts: &PolygonQuadrature) -> Estimate<K>
where
    F: Fn([f64; 2]) -> [f64; K],
{
    let mut out = Estimate::zero();
    if poly.len() < 3 {
        return out;
    }
    let tol_density = opts.tolerance / opts.frame_area();
    // slivers from near-coincident vertices have areas dominated by rounding,
    // so their refinement can never meet a purely area-proportional target
    let floor = SLIVER_FLOOR * opts.tolerance;
    let tol = (tol_density, floor);
    let (lo, hi) = polygon::bounding_box(poly);
    let nt = opts.tiles_per_axis.max(1);
    let dx = (opts.frame_hi[0] - opts.frame_lo[0]) / nt as f64;
    let dy = (opts.frame_hi[1] - opts.frame_lo[1]) / nt as f64;
    let tile_range = |lo: f64, hi: f64, origin: f64, step: f64| {
        let a = ((lo - origin) / step).floor().max(0.0) as usize;
        let b = (((hi - origin) / step).ceil().max(0.0) as usize).min(nt);
        (a.min(nt), b)
    };
    let (ix0, ix1) = tile_range(lo[0], hi[0], opts.frame_lo[0], dx);
    let (iy0, iy1) = tile_range(lo[1], hi[1], opts.frame_lo[1], dy);
    for ix in ix0..ix1 {
        for iy in iy0..iy1 {
            let tlo = [opts.frame_lo[0] + ix as f64 * dx, opts.frame_lo[1] + iy as f64 * dy];
            let thi = [
                if ix + 1 == nt { opts.frame_hi[0] } else { tlo[0] + dx },
                if iy + 1 == nt { opts.frame_hi[1] } else { tlo[1] + dy },
            ];
            let piece = polygon::clip_to_rect(poly, tlo, thi);
            if piece.len() < 3 {
                continue;
            }
            integrate_fan(&piece, f, tol, opts.max_depth, &mut out);
        }
    }
    // Parts of the polygon outside the frame are integrated without tiling.
    let inside_frame = lo[0] >= opts.frame_lo[0] - 1e-12
        && lo[1] >= opts.frame_lo[1] - 1e-12
        && hi[0] <= opts.frame_hi[0] + 1e-12
        && hi[1] <= opts.frame_hi[1] + 1e-12;
    if !inside_frame {
        for piece in polygon::outside_rect_pieces(poly, opts.frame_lo, opts.frame_hi) {
            integrate_fan(&piece, f, tol, opts.max_depth, &mut out);
        }
    }
    out
}

fn integrate_fan<const K: usize, F>(piece: &[[f64; 2]], f: &F, (tol_density, floor): (f64, f64), max_depth: usize, out: &mut Estimate<K>)
where
    F: Fn([f64; 2]) -> [f64; K],
{
    let c = polygon::vertex_centroid(piece);
    for k in 0..piece.len() {
        let t = [c, piece[k], piece[(k + 1) % piece.len()]];
        if triangle_area(&t) <= 0.0 {
            continue;
        }
        let e = integrate_triangle(&t, f, tol_density, floor, max_depth);
        out.accumulate(&e);
    }
}

// ---------------------------------------------------------------------------
// Tensor-product rules
// ---------------------------------------------------------------------------

/// Composite Simpson weights for `n` equally spaced points (n odd, n >= 3)
/// with spacing `h`.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 3 && n % 2 == 1, "Simpson's rule needs an odd number of points >= 3");
    (0..n)
        .map(|i| {
            let c = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

/// Midpoint-rule lattice over an axis-aligned box: calls `visit(center, volume)`
/// for each of the `per_axis^d` cells in row-major order.
pub fn for_each_midpoint(lo: &[f64], hi: &[f64], per_axis: usize, mut visit: impl FnMut(&[f64], f64)) {
    let d = lo.len();
    let steps: Vec<f64> = (0..d).map(|k| (hi[k] - lo[k]) / per_axis as f64).collect();
    let vol: f64 = steps.iter().product();
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let total = per_axis.pow(d as u32);
    for _ in 0..total {
        for k in 0..d {
            x[k] = lo[k] + (idx[k] as f64 + 0.5) * steps[k];
        }
        visit(&x, vol);
        for k in (0..d).rev() {
            idx[k] += 1;
            if idx[k] < per_axis {
                break;
            }
            idx[k] = 0;
        }
    }
}
