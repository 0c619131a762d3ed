//! The argmax cells Vᵢ = B ∩ ⋂ⱼ {λᵢ ≥ λⱼ} of an estimator.

use super::estimator::{AffineScores, Estimator};
use super::polygon::{EdgeTag, Polygon};
use crate::error::{Error, Result};
use crate::models::ExponentialFamilyModel;

/// Edges shorter than this do not count as faces.
pub const FACE_LENGTH_EPS: f64 = 1e-12;

/// Hᵢⱼ = {x : normal·x ≥ offset} with normal = θ̂ᵢ − θ̂ⱼ.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub other: usize,
    pub normal: Vec<f64>,
    pub offset: f64,
    /// False when the constraint does not touch the clipped cell.
    pub active: bool,
}

impl HalfSpace {
    #[inline]
    pub fn slack(&self, x: &[f64]) -> f64 {
        self.normal.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellShape {
    Interval { lo: f64, hi: f64 },
    Polygon(Polygon),
    /// d ≥ 3: only the half-space description is kept.
    Implicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub halfspaces: Vec<HalfSpace>,
    pub shape: CellShape,
    /// Zero length/area. Unknown (false) for implicit cells.
    pub empty: bool,
}

impl Cell {
    pub fn polygon(&self) -> Option<&Polygon> {
        match &self.shape {
            CellShape::Polygon(p) => Some(p),
            _ => None,
        }
    }

    /// Half-space membership test with slack tolerance.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.halfspaces.iter().all(|h| h.slack(x) >= -tol)
    }

    /// Length (d=1) or area (d=2) of the clipped cell.
    pub fn measure(&self) -> Option<f64> {
        match &self.shape {
            CellShape::Interval { lo, hi } => Some((hi - lo).max(0.0)),
            CellShape::Polygon(p) => Some(p.area().max(0.0)),
            CellShape::Implicit => None,
        }
    }
}

/// Convex cells of an estimator clipped to the truncation box.
#[derive(Debug, Clone)]
pub struct Partition {
    estimator: Estimator,
    scores: AffineScores,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cells: Vec<Cell>,
}

impl Partition {
    /// Builds every cell as B ∩ ⋂_{j≠i} Hᵢⱼ; for d = 1 and d = 2 explicit
    /// intervals/polygons are produced and inactive half-spaces are flagged.
    pub fn build(est: &Estimator, model: &ExponentialFamilyModel, lo: &[f64], hi: &[f64]) -> Result<Self> {
        est.validate(model)?;
        let d = est.dimension();
        if lo.len() != d || hi.len() != d || lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
            return Err(Error::param("box", "truncation box must have lo < hi on every axis"));
        }
        let scores = AffineScores::new(est, model)?;
        let n = est.n();
        let mut cells = Vec::with_capacity(n);
        for i in 0..n {
            let mut hs = Vec::with_capacity(n.saturating_sub(1));
            for j in 0..n {
                if j == i {
                    continue;
                }
                // λᵢ ≥ λⱼ  ⇔  x·(θᵢ−θⱼ) ≥ offsetⱼ − offsetᵢ
                let normal: Vec<f64> = scores.slope(i).iter().zip(scores.slope(j)).map(|(a, b)| a - b).collect();
                hs.push(HalfSpace {
                    other: j,
                    normal,
                    offset: scores.offset(j) - scores.offset(i),
                    active: true,
                });
            }
            let (shape, empty) = match d {
                1 => clip_interval(&mut hs, lo[0], hi[0]),
                2 => clip_polygon(&mut hs, lo, hi),
                _ => (CellShape::Implicit, false),
            };
            cells.push(Cell {
                index: i,
                halfspaces: hs,
                shape,
                empty,
            });
        }
        Ok(Partition {
            estimator: est.clone(),
            scores,
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            cells,
        })
    }

    pub fn estimator(&self) -> &Estimator {
        &self.estimator
    }

    pub fn scores(&self) -> &AffineScores {
        &self.scores
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, i: usize) -> &Cell {
        &self.cells[i]
    }

    pub fn n(&self) -> usize {
        self.cells.len()
    }

    pub fn dimension(&self) -> usize {
        self.lo.len()
    }

    pub fn box_lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn box_hi(&self) -> &[f64] {
        &self.hi
    }

    /// argmaxᵢ λᵢ(x), smallest index on ties.
    pub fn assign(&self, x: &[f64]) -> usize {
        self.scores.argmax(x).0
    }

    pub fn empty_cells(&self) -> Vec<usize> {
        self.cells.iter().filter(|c| c.empty).map(|c| c.index).collect()
    }

    pub fn in_box(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

fn clip_interval(hs: &mut [HalfSpace], lo: f64, hi: f64) -> (CellShape, bool) {
    let mut a = lo;
    let mut b = hi;
    let mut lo_by: Option<usize> = None;
    let mut hi_by: Option<usize> = None;
    for (k, h) in hs.iter().enumerate() {
        let c = h.offset / h.normal[0];
        if h.normal[0] > 0.0 {
            if c > a {
                a = c;
                lo_by = Some(k);
            }
        } else if c < b {
            b = c;
            hi_by = Some(k);
        }
    }
    let empty = b - a <= FACE_LENGTH_EPS;
    for (k, h) in hs.iter_mut().enumerate() {
        h.active = !empty && (Some(k) == lo_by || Some(k) == hi_by);
    }
    (CellShape::Interval { lo: a, hi: b.max(a) }, empty)
}

fn clip_polygon(hs: &mut [HalfSpace], lo: &[f64], hi: &[f64]) -> (CellShape, bool) {
    let mut poly = Polygon::rect([lo[0], lo[1]], [hi[0], hi[1]]);
    for h in hs.iter() {
        if poly.is_empty() {
            break;
        }
        poly = poly.clip([h.normal[0], h.normal[1]], h.offset, EdgeTag::Cell(h.other));
    }
    let empty = poly.is_empty();
    for h in hs.iter_mut() {
        h.active = !empty
            && (0..poly.len()).any(|k| {
                let (p, q) = poly.edge(k);
                poly.tags[k] == EdgeTag::Cell(h.other) && (p[0] - q[0]).hypot(p[1] - q[1]) > FACE_LENGTH_EPS
            });
    }
    if empty {
        poly = Polygon::default();
    }
    (CellShape::Polygon(poly), empty)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(d: usize) -> ExponentialFamilyModel {
        ExponentialFamilyModel::isotropic_gaussian(d).unwrap()
    }

    #[test]
    fn single_cell_is_box() {
        let est = Estimator::from_rows(&[vec![0.2, -0.1]], &[1.0]).unwrap();
        let p = Partition::build(&est, &gaussian(2), &[-1.0, -2.0], &[3.0, 2.0]).unwrap();
        assert_eq!(p.n(), 1);
        assert!((p.cell(0).measure().unwrap() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_splits_box_in_half() {
        let est = Estimator::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[0.5, 0.5]).unwrap();
        let p = Partition::build(&est, &gaussian(2), &[-2.0, -2.0], &[2.0, 2.0]).unwrap();
        for c in p.cells() {
            assert!((c.measure().unwrap() - 8.0).abs() < 1e-12);
            assert!(c.halfspaces[0].active);
        }
        let poly = p.cell(0).polygon().unwrap();
        assert!(poly.vertices.iter().all(|v| v[0] >= -1e-15));
    }

    #[test]
    fn redundant_halfspace_pruned() {
        // three collinear assertions: cells 0 and 2 never touch
        let est = Estimator::from_rows(&[vec![-2.0, 0.0], vec![0.0, 0.0], vec![2.0, 0.0]], &[1.0 / 3.0; 3]).unwrap();
        let p = Partition::build(&est, &gaussian(2), &[-5.0, -5.0], &[5.0, 5.0]).unwrap();
        let c0 = p.cell(0);
        let to2 = c0.halfspaces.iter().find(|h| h.other == 2).unwrap();
        let to1 = c0.halfspaces.iter().find(|h| h.other == 1).unwrap();
        assert!(!to2.active);
        assert!(to1.active);
    }

    #[test]
    fn interval_cells_in_one_dimension() {
        let est = Estimator::from_rows(&[vec![-1.0], vec![1.0]], &[0.5, 0.5]).unwrap();
        let p = Partition::build(&est, &gaussian(1), &[-3.0], &[3.0]).unwrap();
        assert_eq!(p.cell(0).shape, CellShape::Interval { lo: -3.0, hi: 0.0 });
        assert_eq!(p.cell(1).shape, CellShape::Interval { lo: 0.0, hi: 3.0 });
    }

    #[test]
    fn empty_cell_flagged() {
        // a tiny q makes the middle assertion lose everywhere
        let est = Estimator::from_rows(&[vec![-1.0], vec![0.0], vec![1.0]], &[0.4999995, 1e-6, 0.4999995]).unwrap();
        let p = Partition::build(&est, &gaussian(1), &[-3.0], &[3.0]).unwrap();
        assert_eq!(p.empty_cells(), vec![1]);
    }

    #[test]
    fn degenerate_pair_named() {
        let est = Estimator::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 0.0]], &[0.3, 0.3, 0.4]).unwrap();
        let err = Partition::build(&est, &gaussian(2), &[-1.0, -1.0], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::Degenerate { i: 0, j: 2, .. }));
    }
}
