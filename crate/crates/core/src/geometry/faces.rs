//! Shared faces between pairs of cells.

use serde::{Deserialize, Serialize};

use super::partition::{CellShape, Partition, FACE_LENGTH_EPS};
use super::polygon::{EdgeTag, Point2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FaceGeometry {
    /// d = 1: the shared boundary point.
    Point { x: f64 },
    /// d = 2: the shared edge, oriented counter-clockwise around cell `i`.
    Segment { a: Point2, b: Point2 },
    /// d ≥ 3: grid points next to the face and the number of grid links
    /// crossing it.
    Sampled { points: Vec<Vec<f64>>, crossings: usize },
}

/// The face between cells `i < j`, with the unit normal pointing out of cell
/// `i` into cell `j` (parallel to θ̂ⱼ − θ̂ᵢ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Face {
    pub i: usize,
    pub j: usize,
    pub normal: Vec<f64>,
    pub geometry: FaceGeometry,
}

impl Face {
    /// Length of a segment face, zero otherwise.
    pub fn length(&self) -> f64 {
        match &self.geometry {
            FaceGeometry::Segment { a, b } => (b[0] - a[0]).hypot(b[1] - a[1]),
            _ => 0.0,
        }
    }
}

/// Maximum number of points stored for a sampled face.
const SAMPLED_POINTS_CAP: usize = 64;
/// Grid resolution per axis for sampled face detection.
const SAMPLED_GRID: usize = 24;

/// Enumerates faces of positive (d−1)-measure, ordered by (i, j).
pub fn face_enumeration(partition: &Partition) -> Vec<Face> {
    let d = partition.dimension();
    let est = partition.estimator();
    let unit_normal = |i: usize, j: usize| {
        let v = est.theta(j) - est.theta(i);
        let nv = v.norm();
        v.iter().map(|c| c / nv).collect::<Vec<f64>>()
    };
    let mut faces = Vec::new();
    match d {
        1 => {
            let ends: Vec<Option<(f64, f64)>> = partition
                .cells()
                .iter()
                .map(|c| match c.shape {
                    CellShape::Interval { lo, hi } if !c.empty => Some((lo, hi)),
                    _ => None,
                })
                .collect();
            let scale = partition.box_hi()[0] - partition.box_lo()[0];
            for i in 0..ends.len() {
                for j in (i + 1)..ends.len() {
                    let (Some((a0, a1)), Some((b0, b1))) = (ends[i], ends[j]) else {
                        continue;
                    };
                    let x = if (a1 - b0).abs() <= 1e-12 * scale {
                        0.5 * (a1 + b0)
                    } else if (b1 - a0).abs() <= 1e-12 * scale {
                        0.5 * (b1 + a0)
                    } else {
                        continue;
                    };
                    if x <= partition.box_lo()[0] || x >= partition.box_hi()[0] {
                        continue;
                    }
                    faces.push(Face {
                        i,
                        j,
                        normal: unit_normal(i, j),
                        geometry: FaceGeometry::Point { x },
                    });
                }
            }
        }
        2 => {
            for cell in partition.cells() {
                let Some(poly) = cell.polygon() else { continue };
                if cell.empty {
                    continue;
                }
                for k in 0..poly.len() {
                    let EdgeTag::Cell(j) = poly.tags[k] else { continue };
                    if j <= cell.index {
                        continue;
                    }
                    let (a, b) = poly.edge(k);
                    if (b[0] - a[0]).hypot(b[1] - a[1]) <= FACE_LENGTH_EPS {
                        continue;
                    }
                    faces.push(Face {
                        i: cell.index,
                        j,
                        normal: unit_normal(cell.index, j),
                        geometry: FaceGeometry::Segment { a, b },
                    });
                }
            }
            faces.sort_by_key(|f| (f.i, f.j));
        }
        _ => {
            let n = partition.n();
            let mut found: Vec<Vec<(usize, Vec<Vec<f64>>)>> = vec![Vec::new(); n];
            let lo = partition.box_lo();
            let hi = partition.box_hi();
            let step: Vec<f64> = (0..d).map(|k| (hi[k] - lo[k]) / SAMPLED_GRID as f64).collect();
            crate::quadrature::for_each_midpoint(lo, hi, SAMPLED_GRID, |x, _| {
                let ci = partition.assign(x);
                for k in 0..d {
                    let mut y = x.to_vec();
                    y[k] += step[k];
                    if y[k] > hi[k] {
                        continue;
                    }
                    let cj = partition.assign(&y);
                    if ci == cj {
                        continue;
                    }
                    let (i, j) = (ci.min(cj), ci.max(cj));
                    let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
                    match found[i].iter_mut().find(|(o, _)| *o == j) {
                        Some((_, pts)) => pts.push(mid),
                        None => found[i].push((j, vec![mid])),
                    }
                }
            });
            for (i, list) in found.into_iter().enumerate() {
                let mut list = list;
                list.sort_by_key(|(j, _)| *j);
                for (j, pts) in list {
                    // a face of positive measure is crossed by many grid links
                    if pts.len() < d {
                        continue;
                    }
                    let crossings = pts.len();
                    let points = pts.into_iter().take(SAMPLED_POINTS_CAP).collect();
                    faces.push(Face {
                        i,
                        j,
                        normal: unit_normal(i, j),
                        geometry: FaceGeometry::Sampled { points, crossings },
                    });
                }
            }
        }
    }
    faces
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Estimator;
    use crate::models::ExponentialFamilyModel;

    #[test]
    fn symmetric_pair_has_one_vertical_face() {
        let m = ExponentialFamilyModel::isotropic_gaussian(2).unwrap();
        let est = Estimator::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[0.5, 0.5]).unwrap();
        let p = Partition::build(&est, &m, &[-2.0, -3.0], &[2.0, 3.0]).unwrap();
        let f = face_enumeration(&p);
        assert_eq!(f.len(), 1);
        assert!((f[0].length() - 6.0).abs() < 1e-12);
        assert_eq!(f[0].normal, vec![-1.0, 0.0]);
        let FaceGeometry::Segment { a, b } = f[0].geometry else { panic!() };
        assert!(a[0].abs() < 1e-15 && b[0].abs() < 1e-15);
    }

    #[test]
    fn single_cell_has_no_faces() {
        let m = ExponentialFamilyModel::isotropic_gaussian(2).unwrap();
        let est = Estimator::from_rows(&[vec![0.0, 0.0]], &[1.0]).unwrap();
        let p = Partition::build(&est, &m, &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert!(face_enumeration(&p).is_empty());
    }

    #[test]
    fn collinear_triple_has_two_parallel_faces() {
        let m = ExponentialFamilyModel::isotropic_gaussian(2).unwrap();
        let est = Estimator::from_rows(&[vec![-2.0, 0.0], vec![0.0, 0.0], vec![2.0, 0.0]], &[1.0 / 3.0; 3]).unwrap();
        let p = Partition::build(&est, &m, &[-4.0, -4.0], &[4.0, 4.0]).unwrap();
        let f = face_enumeration(&p);
        assert_eq!(f.iter().map(|f| (f.i, f.j)).collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
        // faces at x = ±1, checked against assignment on either side
        for face in &f {
            let FaceGeometry::Segment { a, .. } = face.geometry else { panic!() };
            let x = a[0];
            assert!((x.abs() - 1.0).abs() < 1e-12);
            for y in [-3.5, 0.0, 3.5] {
                assert_eq!(p.assign(&[x - 1e-6, y]).min(p.assign(&[x + 1e-6, y])), face.i);
            }
        }
    }

    #[test]
    fn one_dimensional_faces_are_points() {
        let m = ExponentialFamilyModel::isotropic_gaussian(1).unwrap();
        let est = Estimator::from_rows(&[vec![-1.0], vec![1.0], vec![3.0]], &[0.3, 0.4, 0.3]).unwrap();
        let p = Partition::build(&est, &m, &[-5.0], &[7.0]).unwrap();
        let f = face_enumeration(&p);
        assert_eq!(f.len(), 2);
        assert!(matches!(f[0].geometry, FaceGeometry::Point { .. }));
    }

    #[test]
    fn three_dimensional_faces_sampled() {
        let m = ExponentialFamilyModel::isotropic_gaussian(3).unwrap();
        let est = Estimator::from_rows(&[vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]], &[0.5, 0.5]).unwrap();
        let p = Partition::build(&est, &m, &[-1.0; 3], &[1.0; 3]).unwrap();
        let f = face_enumeration(&p);
        assert_eq!(f.len(), 1);
        let FaceGeometry::Sampled { crossings, .. } = &f[0].geometry else { panic!() };
        assert_eq!(*crossings, SAMPLED_GRID * SAMPLED_GRID);
    }
}
