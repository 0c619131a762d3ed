//! Convex polygons in the plane with labelled edges, and half-plane clipping.

use serde::{Deserialize, Serialize};

pub type Point2 = [f64; 2];

/// What generated an edge of a clipped cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeTag {
    /// One of the four sides of the truncation box (0: bottom, 1: right, 2: top, 3: left).
    Box(u8),
    /// The bisecting line shared with another cell.
    Cell(usize),
    /// Anything else (tiles, ad-hoc clips).
    Other,
}

/// Counter-clockwise convex polygon; `tags[k]` labels the edge from
/// `vertices[k]` to `vertices[k + 1]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<Point2>,
    pub tags: Vec<EdgeTag>,
}

impl Polygon {
    pub fn rect(lo: Point2, hi: Point2) -> Self {
        Polygon {
            vertices: vec![lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]],
            tags: vec![EdgeTag::Box(0), EdgeTag::Box(1), EdgeTag::Box(2), EdgeTag::Box(3)],
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3 || self.area() <= 0.0
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn edge(&self, k: usize) -> (Point2, Point2) {
        (self.vertices[k], self.vertices[(k + 1) % self.vertices.len()])
    }

    /// Keeps the part where `a·x >= b`; the new edge along the line gets `tag`.
    pub fn clip(&self, a: Point2, b: f64, tag: EdgeTag) -> Polygon {
        let n = self.vertices.len();
        if n == 0 {
            return self.clone();
        }
        let side = |p: &Point2| a[0] * p[0] + a[1] * p[1] - b;
        // (point, tag of the edge arriving at the point)
        let mut arrived: Vec<(Point2, EdgeTag)> = Vec::with_capacity(n + 2);
        for k in 0..n {
            let p = self.vertices[k];
            let q = self.vertices[(k + 1) % n];
            let t = self.tags[k];
            let sp = side(&p);
            let sq = side(&q);
            let p_in = sp >= 0.0;
            let q_in = sq >= 0.0;
            match (p_in, q_in) {
                (true, true) => arrived.push((q, t)),
                (true, false) => arrived.push((lerp(p, q, sp / (sp - sq)), t)),
                (false, true) => {
                    arrived.push((lerp(p, q, sp / (sp - sq)), tag));
                    arrived.push((q, t));
                }
                (false, false) => {}
            }
        }
        from_arrivals(arrived)
    }

    pub fn contains(&self, p: Point2, tol: f64) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        (0..n).all(|k| {
            let (a, b) = self.edge(k);
            cross(sub(b, a), sub(p, a)) >= -tol * norm(sub(b, a))
        })
    }

    pub fn centroid(&self) -> Point2 {
        area_centroid(&self.vertices)
    }
}

fn from_arrivals(arrived: Vec<(Point2, EdgeTag)>) -> Polygon {
    let m = arrived.len();
    if m == 0 {
        return Polygon::default();
    }
    // Edge from arrived[k] to arrived[k+1] carries the tag stored at k+1.
    let mut vertices = Vec::with_capacity(m);
    let mut tags = Vec::with_capacity(m);
    for k in 0..m {
        vertices.push(arrived[k].0);
        tags.push(arrived[(k + 1) % m].1);
    }
    dedup(Polygon { vertices, tags })
}

/// Removes zero-length edges left behind by clipping through a vertex.
fn dedup(poly: Polygon) -> Polygon {
    let scale = poly
        .vertices
        .iter()
        .fold(1.0f64, |s, p| s.max(p[0].abs()).max(p[1].abs()));
    let eps = 1e-14 * scale;
    let mut vertices: Vec<Point2> = Vec::with_capacity(poly.vertices.len());
    let mut tags: Vec<EdgeTag> = Vec::with_capacity(poly.vertices.len());
    for (v, t) in poly.vertices.into_iter().zip(poly.tags) {
        if let Some(last) = vertices.last() {
            if norm(sub(v, *last)) <= eps {
                // the dropped edge was last -> v; keep v's outgoing tag instead
                *tags.last_mut().unwrap() = t;
                continue;
            }
        }
        vertices.push(v);
        tags.push(t);
    }
    while vertices.len() > 1 && norm(sub(vertices[0], *vertices.last().unwrap())) <= eps {
        vertices.pop();
        tags.pop();
    }
    if vertices.len() < 3 {
        return Polygon::default();
    }
    Polygon { vertices, tags }
}

#[inline]
pub fn lerp(p: Point2, q: Point2, t: f64) -> Point2 {
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

#[inline]
pub fn sub(a: Point2, b: Point2) -> Point2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn cross(a: Point2, b: Point2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn norm(a: Point2) -> f64 {
    a[0].hypot(a[1])
}

pub fn signed_area(v: &[Point2]) -> f64 {
    let n = v.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for k in 0..n {
        s += cross(v[k], v[(k + 1) % n]);
    }
    0.5 * s
}

pub fn area_centroid(v: &[Point2]) -> Point2 {
    let n = v.len();
    let a = signed_area(v);
    if n < 3 || a.abs() < 1e-300 {
        return vertex_centroid(v);
    }
    let mut cx = 0.0;
    let mut cy = 0.0;
    for k in 0..n {
        let p = v[k];
        let q = v[(k + 1) % n];
        let c = cross(p, q);
        cx += (p[0] + q[0]) * c;
        cy += (p[1] + q[1]) * c;
    }
    [cx / (6.0 * a), cy / (6.0 * a)]
}

pub fn vertex_centroid(v: &[Point2]) -> Point2 {
    let n = v.len().max(1) as f64;
    let (sx, sy) = v.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
    [sx / n, sy / n]
}

pub fn bounding_box(v: &[Point2]) -> (Point2, Point2) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in v {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

fn untagged(v: &[Point2]) -> Polygon {
    Polygon {
        vertices: v.to_vec(),
        tags: vec![EdgeTag::Other; v.len()],
    }
}

/// Intersection of a convex polygon with an axis-aligned rectangle.
pub fn clip_to_rect(v: &[Point2], lo: Point2, hi: Point2) -> Vec<Point2> {
    untagged(v)
        .clip([1.0, 0.0], lo[0], EdgeTag::Other)
        .clip([-1.0, 0.0], -hi[0], EdgeTag::Other)
        .clip([0.0, 1.0], lo[1], EdgeTag::Other)
        .clip([0.0, -1.0], -hi[1], EdgeTag::Other)
        .vertices
}

/// Convex pieces of a polygon lying outside a rectangle (left, right, and
/// the bottom/top strips between them).
pub fn outside_rect_pieces(v: &[Point2], lo: Point2, hi: Point2) -> Vec<Vec<Point2>> {
    let p = untagged(v);
    let left = p.clip([-1.0, 0.0], -lo[0], EdgeTag::Other);
    let right = p.clip([1.0, 0.0], hi[0], EdgeTag::Other);
    let middle = p
        .clip([1.0, 0.0], lo[0], EdgeTag::Other)
        .clip([-1.0, 0.0], -hi[0], EdgeTag::Other);
    let bottom = middle.clip([0.0, -1.0], -lo[1], EdgeTag::Other);
    let top = middle.clip([0.0, 1.0], hi[1], EdgeTag::Other);
    [left, right, bottom, top]
        .into_iter()
        .filter(|q| q.vertices.len() >= 3 && q.area() > 0.0)
        .map(|q| q.vertices)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_square_diagonal_tags_new_edge() {
        let sq = Polygon::rect([0.0, 0.0], [1.0, 1.0]);
        // keep x + y >= 1
        let c = sq.clip([1.0, 1.0], 1.0, EdgeTag::Cell(7));
        assert_eq!(c.len(), 3);
        assert!((c.area() - 0.5).abs() < 1e-15);
        assert_eq!(c.tags.iter().filter(|t| **t == EdgeTag::Cell(7)).count(), 1);
        assert!(c.tags.contains(&EdgeTag::Box(1)));
        assert!(c.tags.contains(&EdgeTag::Box(2)));
    }

    #[test]
    fn clip_through_vertex_drops_degenerate_edge() {
        let sq = Polygon::rect([0.0, 0.0], [1.0, 1.0]);
        // line x = 0.5 exactly; then through the corner (1,1) with a diagonal
        let c = sq.clip([1.0, 0.0], 0.5, EdgeTag::Cell(1));
        assert_eq!(c.len(), 4);
        let c2 = c.clip([-1.0, 1.0], 0.0, EdgeTag::Cell(2));
        // keeps y >= x on [0.5,1]x[0,1]: triangle (0.5,0.5),(1,1),(0.5,1)
        assert_eq!(c2.len(), 3);
        assert!((c2.area() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn empty_clip() {
        let sq = Polygon::rect([0.0, 0.0], [1.0, 1.0]);
        let c = sq.clip([1.0, 0.0], 2.0, EdgeTag::Other);
        assert!(c.is_empty());
    }

    #[test]
    fn outside_pieces_cover_complement() {
        let tri = vec![[-2.0, -2.0], [3.0, -2.0], [0.0, 3.0]];
        let total = signed_area(&tri);
        let inside = signed_area(&clip_to_rect(&tri, [-1.0, -1.0], [1.0, 1.0]));
        let outside: f64 = outside_rect_pieces(&tri, [-1.0, -1.0], [1.0, 1.0])
            .iter()
            .map(|p| signed_area(p))
            .sum();
        assert!((inside + outside - total).abs() < 1e-12);
    }
}
