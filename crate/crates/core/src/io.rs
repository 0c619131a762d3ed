//! Result documents (JSON), lattice colourings (CSV) and pictures (SVG).
//!
//! Every emitted artifact is a pure function of its inputs: numbers are
//! written with fixed precision or by serde_json's shortest round-trip
//! formatting, and colours come from a fixed table, so identical inputs give
//! identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CellShape, Estimator, Partition};
use crate::models::{FamilyKind, PriorSpec};
use crate::oracle::{Coloring, GridProblem};
use crate::solver::{SolveResult, TraceEntry};

/// Version of every document written by this module.
pub const SCHEMA_VERSION: u32 = 1;

/// Cell colours, cycled by index.
pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f",
];

pub fn color(index: usize) -> &'static str {
    PALETTE[index % PALETTE.len()]
}

/// Where an estimator came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Solver,
    Oracle,
}

/// An estimator together with the problem it was computed for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorDocument {
    pub schema_version: u32,
    pub source: Source,
    pub model: FamilyKind,
    pub prior: PriorSpec,
    pub truncation_epsilon: f64,
    pub n: usize,
    pub assertions: Vec<Vec<f64>>,
    pub coding_probabilities: Vec<f64>,
    #[serde(rename = "I1")]
    pub i1: f64,
    #[serde(rename = "C")]
    pub c: f64,
    /// ‖residual‖∞ of the n(d+1) stationarity equations; absent for the oracle.
    pub residual_norm: Option<f64>,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
    /// Solver: the full result. Oracle: absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveDetails>,
    /// Oracle: lattice and match statistics. Solver: absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleDetails>,
    /// The defaults-resolved configuration of the run.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveDetails {
    #[serde(rename = "I1_direct")]
    pub i1_direct: f64,
    pub residual: Vec<f64>,
    pub iterations: usize,
    pub restart_index: usize,
    pub seed: u64,
    pub diagnostics: crate::solver::Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleDetails {
    pub grid_shape: Vec<usize>,
    pub grid_points: usize,
    pub seed: u64,
    pub sweeps: usize,
    pub moves: usize,
    pub mismatch_fraction: f64,
    pub mismatched_points: usize,
    /// Colours left empty by the descent.
    pub empty_classes: Vec<usize>,
}

impl EstimatorDocument {
    pub fn from_solve(result: &SolveResult, model: FamilyKind, prior: PriorSpec, truncation_epsilon: f64, config: serde_json::Value) -> Self {
        EstimatorDocument {
            schema_version: SCHEMA_VERSION,
            source: Source::Solver,
            model,
            prior,
            truncation_epsilon,
            n: result.estimator.n(),
            assertions: result.estimator.theta_rows(),
            coding_probabilities: result.estimator.coding_probabilities().to_vec(),
            i1: result.i1,
            c: result.constant,
            residual_norm: Some(result.residual_norm),
            converged: result.converged,
            trace: result.trace.clone(),
            solve: Some(SolveDetails {
                i1_direct: result.i1_direct,
                residual: result.residual.clone(),
                iterations: result.iterations,
                restart_index: result.restart_index,
                seed: result.seed,
                diagnostics: result.diagnostics.clone(),
            }),
            oracle: None,
            config,
        }
    }

    /// `estimator` covers the non-empty colours only, so `n` may be smaller
    /// than the number of colours used.
    #[allow(clippy::too_many_arguments)]
    pub fn from_oracle(
        estimator: &Estimator,
        i1: f64,
        c_disc: f64,
        details: OracleDetails,
        model: FamilyKind,
        prior: PriorSpec,
        truncation_epsilon: f64,
        config: serde_json::Value,
    ) -> Self {
        EstimatorDocument {
            schema_version: SCHEMA_VERSION,
            source: Source::Oracle,
            model,
            prior,
            truncation_epsilon,
            n: estimator.n(),
            assertions: estimator.theta_rows(),
            coding_probabilities: estimator.coding_probabilities().to_vec(),
            i1,
            c: c_disc,
            residual_norm: None,
            converged: true,
            trace: Vec::new(),
            solve: None,
            oracle: Some(details),
            config,
        }
    }

    pub fn estimator(&self) -> Result<Estimator> {
        if self.assertions.len() != self.n {
            return Err(Error::param("n", "does not match the number of assertions"));
        }
        Estimator::from_rows(&self.assertions, &self.coding_probabilities)
    }

    pub fn validate_version(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::param(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, found {}", self.schema_version),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryCell {
    pub index: usize,
    /// Polygon vertices counter-clockwise (d = 2) or interval ends (d = 1);
    /// empty for empty cells.
    pub vertices: Vec<Vec<f64>>,
    pub q: f64,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryDocument {
    pub schema_version: u32,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    pub cells: Vec<GeometryCell>,
}

impl GeometryDocument {
    /// Fails for d ≥ 3, where cells have no explicit geometry.
    pub fn from_partition(partition: &Partition) -> Result<Self> {
        let est = partition.estimator();
        let cells = partition
            .cells()
            .iter()
            .map(|c| {
                let vertices = match &c.shape {
                    _ if c.empty => Vec::new(),
                    CellShape::Interval { lo, hi } => vec![vec![*lo], vec![*hi]],
                    CellShape::Polygon(p) => p.vertices.iter().map(|v| v.to_vec()).collect(),
                    CellShape::Implicit => {
                        return Err(Error::Unsupported("geometry export needs d ≤ 2".into()));
                    }
                };
                Ok(GeometryCell {
                    index: c.index,
                    vertices,
                    q: est.q(c.index),
                    theta: est.theta(c.index).iter().copied().collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GeometryDocument {
            schema_version: SCHEMA_VERSION,
            box_lo: partition.box_lo().to_vec(),
            box_hi: partition.box_hi().to_vec(),
            cells,
        })
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// One row per lattice point: coordinates, weight, colour.
pub fn points_csv(grid: &GridProblem, coloring: &Coloring) -> String {
    let d = grid.dimension();
    let mut out = String::new();
    let header: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    let _ = writeln!(out, "{},weight,color", header.join(","));
    for k in 0..grid.len() {
        for v in grid.point(k) {
            let _ = write!(out, "{v:e},");
        }
        let _ = writeln!(out, "{:e},{}", grid.weight(k), coloring.label(k));
    }
    out
}

/// Canvas width in pixels; the height follows the aspect ratio of the view.
const CANVAS: f64 = 640.0;

struct View {
    lo: [f64; 2],
    hi: [f64; 2],
    width: f64,
    height: f64,
}

impl View {
    fn new(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != 2 || hi.len() != 2 {
            return Err(Error::Unsupported("SVG output needs d = 2".into()));
        }
        let height = CANVAS * (hi[1] - lo[1]) / (hi[0] - lo[0]);
        Ok(View {
            lo: [lo[0], lo[1]],
            hi: [hi[0], hi[1]],
            width: CANVAS,
            height,
        })
    }

    /// Data → pixel coordinates, y pointing up in the data.
    fn px(&self, p: &[f64]) -> (f64, f64) {
        let x = (p[0] - self.lo[0]) / (self.hi[0] - self.lo[0]) * self.width;
        let y = (self.hi[1] - p[1]) / (self.hi[1] - self.lo[1]) * self.height;
        (x, y)
    }

    fn header(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.3} {:.3}\">",
            self.width, self.height, self.width, self.height
        );
        let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>");
    }

    fn points_attr(&self, vertices: &[[f64; 2]]) -> String {
        vertices
            .iter()
            .map(|v| {
                let (x, y) = self.px(v);
                format!("{x:.3},{y:.3}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn boundaries(view: &View, partition: &Partition, out: &mut String) {
    let _ = writeln!(out, "<g fill=\"none\" stroke=\"#000000\" stroke-width=\"1.5\">");
    for cell in partition.cells() {
        if let Some(p) = cell.polygon().filter(|_| !cell.empty) {
            let _ = writeln!(out, "<polygon points=\"{}\"/>", view.points_attr(&p.vertices));
        }
    }
    let _ = writeln!(out, "</g>");
}

/// The cells of a d = 2 partition filled by index, outlined in black.
pub fn partition_svg(partition: &Partition) -> Result<String> {
    let view = View::new(partition.box_lo(), partition.box_hi())?;
    let mut out = String::new();
    view.header(&mut out);
    let _ = writeln!(out, "<g stroke=\"none\" fill-opacity=\"0.45\">");
    for cell in partition.cells() {
        if let Some(p) = cell.polygon().filter(|_| !cell.empty) {
            let _ = writeln!(
                out,
                "<polygon points=\"{}\" fill=\"{}\"/>",
                view.points_attr(&p.vertices),
                color(cell.index)
            );
        }
    }
    let _ = writeln!(out, "</g>");
    boundaries(&view, partition, &mut out);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Lattice points as coloured dots under the boundaries of `partition`.
pub fn overlay_svg(grid: &GridProblem, coloring: &Coloring, partition: &Partition) -> Result<String> {
    let view = View::new(grid.box_lo(), grid.box_hi())?;
    let mut out = String::new();
    view.header(&mut out);
    let sp = grid.spacing();
    let radius = 0.35 * (sp[0] / (view.hi[0] - view.lo[0]) * view.width).min(sp[1] / (view.hi[1] - view.lo[1]) * view.height);
    let _ = writeln!(out, "<g stroke=\"none\">");
    for k in 0..grid.len() {
        let (x, y) = view.px(grid.point(k));
        let _ = writeln!(
            out,
            "<circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"{radius:.3}\" fill=\"{}\"/>",
            color(coloring.label(k))
        );
    }
    let _ = writeln!(out, "</g>");
    boundaries(&view, partition, &mut out);
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::IntegrationOptions;
    use crate::models::{ExponentialFamilyModel, MarginalDensity};
    use crate::solver::{multi_start, Problem, SolverConfig};

    #[test]
    fn documents_round_trip() {
        let model = ExponentialFamilyModel::isotropic_gaussian(2).unwrap();
        let prior = PriorSpec::gaussian(vec![0.0, 0.0], 1.0).unwrap();
        let p = Problem::new(model.clone(), &prior, 1e-12, IntegrationOptions::default()).unwrap();
        let r = multi_start(&p, &SolverConfig::with_n(3)).unwrap();
        let doc = EstimatorDocument::from_solve(&r, model.kind().clone(), prior, 1e-12, serde_json::json!({"n": 3}));
        let text = to_json(&doc).unwrap();
        let back: EstimatorDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(to_json(&back).unwrap(), text);
        assert_eq!(back.estimator().unwrap(), r.estimator);
        assert!(text.contains("\"I1\"") && text.contains("\"C\"") && text.contains("\"schema_version\": 1"));

        let part = p.partition(&r.estimator).unwrap();
        let geo = GeometryDocument::from_partition(&part).unwrap();
        assert_eq!(geo.cells.len(), 3);
        let svg = partition_svg(&part).unwrap();
        assert_eq!(svg, partition_svg(&part).unwrap());
        assert_eq!(svg.matches("<polygon").count(), 6);
    }

    #[test]
    fn csv_has_one_row_per_point() {
        let model = ExponentialFamilyModel::isotropic_gaussian(2).unwrap();
        let prior = PriorSpec::gaussian(vec![0.0, 0.0], 1.0).unwrap();
        let marginal = MarginalDensity::new(&model, &prior, 1e-6).unwrap();
        let grid = GridProblem::with_shape(&marginal, &[4, 5]).unwrap();
        let labels = (0..grid.len()).map(|k| k % 2).collect();
        let coloring = Coloring::new(&grid, labels, 2).unwrap();
        let csv = points_csv(&grid, &coloring);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x1,x2,weight,color");
        assert_eq!(lines.len(), 21);
        assert!(lines[2].ends_with(",1"));
    }
}
