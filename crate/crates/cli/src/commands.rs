use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};

use smml::io::{self, EstimatorDocument, GeometryDocument, OracleDetails};
use smml::models::MarginalDensity;
use smml::oracle::{best_of_seeds, estimator_from_coloring, theorem_match, GridProblem};
use smml::solver::checks::FACE_INEQUALITY_TOLERANCE;
use smml::solver::{continuity_check, face_inequality_check, inf_norm, multi_start, residual};
use smml::variation::check_solution;
use smml::{Estimator, ExponentialFamilyModel, Partition};

use crate::config::{existing_file, Format, LoadedConfig};

/// How a command ended; configuration and I/O problems are errors instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    /// Non-convergence, a failed check, or a mismatch above threshold.
    Fail,
}

impl Outcome {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

pub enum Failure {
    Usage(anyhow::Error),
    Numerical(anyhow::Error),
}

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn numerical(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn numerical(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Numerical(e.into()))
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .usage()
}

fn output_dir(cfg: &LoadedConfig) -> Result<std::path::PathBuf, Failure> {
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .usage()?;
    Ok(dir)
}

/// One row per cell: index, coding probability, assertion, and the mean
/// μ(θ̂) the assertion stands for.
pub fn cells_csv(model: &ExponentialFamilyModel, est: &Estimator) -> anyhow::Result<String> {
    let d = est.dimension();
    let mut out = String::from("index,q");
    for k in 1..=d {
        let _ = write!(out, ",theta{k}");
    }
    for k in 1..=d {
        let _ = write!(out, ",mean{k}");
    }
    out.push('\n');
    for i in 0..est.n() {
        let _ = write!(out, "{i},{:e}", est.q(i));
        for v in est.theta(i).iter() {
            let _ = write!(out, ",{v:e}");
        }
        for v in model.grad_psi(est.theta(i).as_slice())?.iter() {
            let _ = write!(out, ",{v:e}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn solve(config: &Path) -> Result<Outcome, Failure> {
    let cfg = LoadedConfig::load(config).usage()?;
    let problem = cfg.problem().numerical()?;
    let (result, converged) = match multi_start(&problem, &cfg.config.solver) {
        Ok(r) => (r, true),
        Err(mut e) => match e.best.take() {
            Some(best) => {
                eprintln!("warning: {e}; writing the best attempt");
                (*best, false)
            }
            None => return Err(Failure::Numerical(anyhow!("{e}: {}", e.failures.join("; ")))),
        },
    };
    let doc = EstimatorDocument::from_solve(
        &result,
        cfg.model.kind().clone(),
        cfg.prior.clone(),
        cfg.config.truncation_epsilon,
        cfg.echo(),
    );
    let dir = output_dir(&cfg)?;
    let partition = problem.partition(&result.estimator).numerical()?;
    if cfg.wants(Format::Json) {
        write(&dir.join("result.json"), &io::to_json(&doc).usage()?)?;
        if problem.dimension() <= 2 {
            let geometry = GeometryDocument::from_partition(&partition).numerical()?;
            write(&dir.join("geometry.json"), &io::to_json(&geometry).usage()?)?;
        }
    }
    if cfg.wants(Format::Svg) && problem.dimension() == 2 {
        write(&dir.join("cells.svg"), &io::partition_svg(&partition).numerical()?)?;
    }
    if cfg.wants(Format::Csv) {
        write(&dir.join("cells.csv"), &cells_csv(&cfg.model, &result.estimator).numerical()?)?;
    }
    println!("n          {}", result.estimator.n());
    println!("I1         {:.12}", result.i1);
    println!("I1 direct  {:.12}", result.i1_direct);
    println!("residual   {:.3e}", result.residual_norm);
    println!("iterations {}", result.iterations);
    println!("converged  {converged}");
    Ok(Outcome::from_pass(converged && result.converged))
}

pub fn oracle(config: &Path) -> Result<Outcome, Failure> {
    let cfg = LoadedConfig::load(config).usage()?;
    let marginal = &cfg.oracle_marginal().numerical()?;
    let oc = &cfg.config.oracle;
    let grid = GridProblem::new(marginal, oc.grid_points).numerical()?;
    let best = best_of_seeds(&grid, cfg.config.solver.n, &oc.seeds).numerical()?;
    let report = theorem_match(&grid, &best.coloring).numerical()?;
    let (est, _) = estimator_from_coloring(&grid, &best.coloring).numerical()?;
    let details = OracleDetails {
        grid_shape: grid.shape().to_vec(),
        grid_points: grid.len(),
        seed: best.seed,
        sweeps: best.sweeps,
        moves: best.moves,
        mismatch_fraction: report.mismatch_fraction,
        mismatched_points: report.mismatched_points,
        empty_classes: best.coloring.empty_classes(),
    };
    let doc = EstimatorDocument::from_oracle(
        &est,
        best.i1,
        grid.c_disc(),
        details,
        cfg.model.kind().clone(),
        cfg.prior.clone(),
        marginal.eps_trunc(),
        cfg.echo(),
    );
    let dir = output_dir(&cfg)?;
    if cfg.wants(Format::Json) {
        write(&dir.join("oracle.json"), &io::to_json(&doc).usage()?)?;
    }
    if cfg.wants(Format::Csv) {
        write(&dir.join("points.csv"), &io::points_csv(&grid, &best.coloring))?;
    }
    if cfg.wants(Format::Svg) && grid.dimension() == 2 {
        let partition = Partition::build(&est, &cfg.model, grid.box_lo(), grid.box_hi()).numerical()?;
        write(&dir.join("overlay.svg"), &io::overlay_svg(&grid, &best.coloring, &partition).numerical()?)?;
    }
    let pass = report.mismatch_fraction <= oc.mismatch_threshold;
    println!("grid       {:?} ({} points)", grid.shape(), grid.len());
    println!("I1         {:.12}", best.i1);
    println!("sweeps     {}", best.sweeps);
    println!("moves      {}", best.moves);
    println!("classes    {}", est.n());
    println!(
        "mismatch   {:.6} (threshold {}) {}",
        report.mismatch_fraction,
        oc.mismatch_threshold,
        if pass { "pass" } else { "FAIL" }
    );
    Ok(Outcome::from_pass(pass))
}

fn load_document(path: &Path) -> anyhow::Result<EstimatorDocument> {
    existing_file(path)?;
    let doc: EstimatorDocument = io::read_json(path).with_context(|| format!("cannot load {}", path.display()))?;
    doc.validate_version()?;
    Ok(doc)
}

struct Table {
    rows: Vec<(String, String, String, bool)>,
}

impl Table {
    fn row(&mut self, name: impl Into<String>, value: impl Into<String>, limit: impl Into<String>, pass: bool) {
        self.rows.push((name.into(), value.into(), limit.into(), pass));
    }

    fn print(&self) {
        println!("{:<34} {:>12} {:>14}  result", "check", "value", "limit");
        for (name, value, limit, pass) in &self.rows {
            println!("{name:<34} {value:>12} {limit:>14}  {}", if *pass { "pass" } else { "FAIL" });
        }
    }

    fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.3)
    }
}

pub fn check(config: &Path, result: &Path) -> Result<Outcome, Failure> {
    let cfg = LoadedConfig::load(config).usage()?;
    let doc = load_document(result).usage()?;
    if &doc.model != cfg.model.kind() || doc.prior != cfg.prior || doc.truncation_epsilon != cfg.config.truncation_epsilon {
        return Err(Failure::Usage(anyhow!(
            "{} was computed for a different model, prior or truncation than {}",
            result.display(),
            config.display()
        )));
    }
    let est = doc.estimator().usage()?;
    est.validate(&cfg.model).usage()?;
    let problem = cfg.problem().numerical()?;
    let cc = &cfg.config.check;
    let mut table = Table { rows: Vec::new() };

    let res = inf_norm(&residual(&problem, &est).numerical()?);
    let tol = cfg.config.solver.residual_tolerance;
    table.row("stationarity residual", format!("{res:.2e}"), format!("<= {tol:.0e}"), res <= tol);

    if problem.dimension() == 2 {
        let reports = check_solution(&problem, &est, cc.specs_per_face, cc.seed).numerical()?;
        let mut faces: Vec<(usize, usize)> = reports.iter().map(|r| (r.spec.i, r.spec.j)).collect();
        faces.dedup();
        println!("{:<8} {:>5} {:>12} {:>12} {:>12} {:>12}", "face", "specs", "max|Id|", "max|Id~|/s", "min Idd", "quad err");
        for (i, j) in &faces {
            let rs: Vec<_> = reports.iter().filter(|r| (r.spec.i, r.spec.j) == (*i, *j)).collect();
            let id = rs.iter().map(|r| r.id_formula.abs()).fold(0.0, f64::max);
            let idn = rs.iter().map(|r| r.id_numeric.abs() / r.id_scale).fold(0.0, f64::max);
            let idd = rs.iter().map(|r| r.idd_numeric.min(r.idd_formula)).fold(f64::INFINITY, f64::min);
            let qe = rs.iter().map(|r| r.quadrature_error).fold(0.0, f64::max);
            println!("{:<8} {:>5} {id:>12.2e} {idn:>12.2e} {idd:>12.4e} {qe:>12.2e}", format!("{i}-{j}"), rs.len());
        }
        println!();
        let id_worst = reports
            .iter()
            .map(|r| r.id_formula.abs() / (cc.quadrature_factor * r.quadrature_error.max(f64::MIN_POSITIVE)))
            .fold(0.0, f64::max);
        table.row(
            "first variation |Id| / quad err",
            format!("{:.2e}", id_worst * cc.quadrature_factor),
            format!("<= {}", cc.quadrature_factor),
            id_worst <= 1.0,
        );
        let flat = reports.iter().map(|r| r.id_numeric.abs() / r.id_scale).fold(0.0, f64::max);
        table.row(
            "first variation, deformed I1",
            format!("{flat:.2e}"),
            format!("<= {:.0e}", smml::variation::STATIONARY_FRACTION),
            reports.iter().all(|r| r.stationary()),
        );
        let idd = reports
            .iter()
            .map(|r| r.idd_numeric.min(r.idd_formula))
            .fold(f64::INFINITY, f64::min);
        table.row(
            format!("second variation ({} specs)", reports.len()),
            format!("{idd:.3e}"),
            format!(">= -{:.0e}", cc.idd_tolerance),
            idd >= -cc.idd_tolerance,
        );
    } else {
        println!("variation checks need d = 2; skipped for d = {}", problem.dimension());
    }

    let fi = face_inequality_check(&problem, &est).numerical()?;
    let samples: usize = fi.faces.iter().map(|f| f.samples).sum();
    table.row(
        format!("face inequality ({} faces, {samples} pts)", fi.faces.len()),
        if fi.faces.is_empty() { "-".to_string() } else { format!("{:.3e}", fi.min_margin) },
        format!(">= -{FACE_INEQUALITY_TOLERANCE:.0e}"),
        fi.passed(FACE_INEQUALITY_TOLERANCE),
    );
    let cont = continuity_check(&problem, &est, cc.continuity_samples, cc.seed).numerical()?;
    table.row(
        format!("continuity ({} pts)", cont.interior_samples),
        format!("{:.2e}", cont.interior_max_error),
        "<= 1e-12",
        cont.interior_max_error <= 1e-12,
    );
    table.row(
        format!("continuity across faces ({} pts)", cont.face_samples),
        format!("{:.3}", cont.face_max_jump_ratio),
        "<= 1",
        cont.passed,
    );
    table.print();
    Ok(Outcome::from_pass(table.passed()))
}

pub fn export(result: &Path, format: Format, output: Option<&Path>) -> Result<Outcome, Failure> {
    let doc = load_document(result).usage()?;
    let est = doc.estimator().usage()?;
    let text = match format {
        Format::Json => io::to_json(&doc).usage()?,
        Format::Svg | Format::Csv => {
            let model = ExponentialFamilyModel::from_kind(&doc.model, None).usage()?;
            est.validate(&model).usage()?;
            if format == Format::Csv {
                cells_csv(&model, &est).numerical()?
            } else {
                if model.dimension() != 2 {
                    return Err(Failure::Usage(anyhow!("svg export needs d = 2, found d = {}", model.dimension())));
                }
                let marginal = MarginalDensity::new(&model, &doc.prior, doc.truncation_epsilon).usage()?;
                let partition = Partition::build(&est, &model, marginal.box_lo(), marginal.box_hi()).numerical()?;
                io::partition_svg(&partition).numerical()?
            }
        }
    };
    match output {
        Some(path) => write(path, &text)?,
        None => print!("{text}"),
    }
    Ok(Outcome::Pass)
}
