//! The run configuration: one TOML file per run, every key optional except
//! the model and prior, unknown keys rejected.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};

use smml::geometry::IntegrationOptions;
use smml::models::{ExponentialFamilyModel, FamilyKind, MarginalDensity, PriorSpec, TabulatedPrior, DEFAULT_EPS_TRUNC};
use smml::{Error, Problem, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// ε_trunc: the box B holds at least 1 − ε of the marginal's mass.
    #[serde(default = "default_eps")]
    pub truncation_epsilon: f64,
    pub model: FamilyKind,
    pub prior: PriorSection,
    #[serde(default)]
    pub integration: IntegrationOptions,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub check: CheckSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_eps() -> f64 {
    DEFAULT_EPS_TRUNC
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum PriorSection {
    Gaussian { mean: Vec<f64>, scale: f64 },
    /// JSON `{lo, hi, points, values}`; the path is relative to the config file.
    Tabulated { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub grid_points: usize,
    /// The lattice covers the box of this truncation; defaults to the
    /// problem's. Lattice points far in the tail carry too little weight for
    /// any move to register, so a box much wider than the mass only adds
    /// points whose colours never settle.
    pub truncation_epsilon: Option<f64>,
    /// One greedy descent per seed; the lowest I₁ is kept.
    pub seeds: Vec<u64>,
    /// Largest mismatch weight fraction that still exits 0.
    pub mismatch_threshold: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            grid_points: smml::oracle::DEFAULT_GRID_POINTS,
            truncation_epsilon: None,
            seeds: vec![0],
            mismatch_threshold: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSection {
    pub specs_per_face: usize,
    pub seed: u64,
    pub continuity_samples: usize,
    /// |Id| must stay below this multiple of the quadrature error.
    pub quadrature_factor: f64,
    pub idd_tolerance: f64,
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection {
            specs_per_face: 10,
            seed: 0,
            continuity_samples: 1000,
            quadrature_factor: 10.0,
            idd_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Json,
    Svg,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Relative to the config file.
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: PathBuf::from("."),
            formats: vec![Format::Json, Format::Svg, Format::Csv],
        }
    }
}

/// A parsed and validated configuration with its resolved inputs.
#[derive(Debug)]
pub struct LoadedConfig {
    pub config: Config,
    pub base: PathBuf,
    pub model: ExponentialFamilyModel,
    pub prior: PriorSpec,
    pub marginal: MarginalDensity,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: Config = toml::from_str(&text).map_err(|e| parse_error(path, &text, e))?;
        config.oracle.truncation_epsilon.get_or_insert(config.truncation_epsilon);
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let anchored = |(key, e): (String, anyhow::Error)| anchor(path, &text, &key, e);
        config.validate().map_err(anchored)?;
        let model = ExponentialFamilyModel::from_kind(&config.model, None).map_err(|e| anchored(("model.family".into(), e.into())))?;
        let prior = config.prior_spec(&base).map_err(anchored)?;
        let prior_key = match config.prior {
            PriorSection::Gaussian { .. } => "prior.mean",
            PriorSection::Tabulated { .. } => "prior.file",
        };
        if prior.dimension() != model.dimension() {
            let e = anyhow!("prior has dimension {} but the model has {}", prior.dimension(), model.dimension());
            return Err(anchored((prior_key.into(), e)));
        }
        // the marginal checks the prior against the family's natural domain
        let marginal = MarginalDensity::new(&model, &prior, config.truncation_epsilon).map_err(|e| {
            let (key, e) = keyed(e);
            let key = match key.as_str() {
                "" => String::new(),
                k if k.starts_with("prior") => "prior.kind".into(),
                k => k.to_string(),
            };
            anchored((key, e))
        })?;
        Ok(LoadedConfig {
            config,
            base,
            model,
            prior,
            marginal,
        })
    }

    /// The marginal whose box the oracle lattice covers.
    pub fn oracle_marginal(&self) -> anyhow::Result<MarginalDensity> {
        match self.config.oracle.truncation_epsilon {
            Some(e) if e != self.config.truncation_epsilon => Ok(MarginalDensity::new(&self.model, &self.prior, e)?),
            _ => Ok(self.marginal.clone()),
        }
    }

    pub fn problem(&self) -> anyhow::Result<Problem> {
        Ok(Problem::from_marginal(self.marginal.clone(), self.config.integration)?)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base.join(&self.config.output.directory)
    }

    pub fn wants(&self, f: Format) -> bool {
        self.config.output.formats.contains(&f)
    }

    /// The defaults-resolved configuration, embedded in every output document.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }
}

type Keyed<T> = Result<T, (String, anyhow::Error)>;

fn invalid(key: &str, reason: impl std::fmt::Display) -> (String, anyhow::Error) {
    (key.to_string(), anyhow!("invalid parameter `{key}`: {reason}"))
}

fn keyed(e: Error) -> (String, anyhow::Error) {
    let key = match &e {
        Error::InvalidParameter { name, .. } => name.clone(),
        _ => String::new(),
    };
    (key, e.into())
}

impl Config {
    fn validate(&self) -> Keyed<()> {
        for (key, eps) in [
            ("truncation_epsilon", Some(self.truncation_epsilon)),
            ("oracle.truncation_epsilon", self.oracle.truncation_epsilon),
        ] {
            match eps {
                Some(e) if !(e > 0.0 && e < 1.0) => return Err(invalid(key, format!("must lie in (0, 1), found {e}"))),
                _ => {}
            }
        }
        self.solver.validate().map_err(keyed)?;
        self.integration.validate().map_err(keyed)?;
        if self.oracle.grid_points == 0 {
            return Err(invalid("oracle.grid_points", "must be at least 1"));
        }
        if self.oracle.seeds.is_empty() {
            return Err(invalid("oracle.seeds", "needs at least one seed"));
        }
        if !(self.oracle.mismatch_threshold >= 0.0) {
            return Err(invalid("oracle.mismatch_threshold", "must be non-negative"));
        }
        if self.check.specs_per_face == 0 {
            return Err(invalid("check.specs_per_face", "must be at least 1"));
        }
        if !(self.check.quadrature_factor > 0.0) {
            return Err(invalid("check.quadrature_factor", "must be positive"));
        }
        if !(self.check.idd_tolerance >= 0.0) {
            return Err(invalid("check.idd_tolerance", "must be non-negative"));
        }
        Ok(())
    }

    fn prior_spec(&self, base: &Path) -> Keyed<PriorSpec> {
        match &self.prior {
            PriorSection::Gaussian { mean, scale } => PriorSpec::gaussian(mean.clone(), *scale).map_err(keyed),
            PriorSection::Tabulated { file } => {
                let path = base.join(file);
                let t: TabulatedPrior = smml::io::read_json(&path)
                    .map_err(|e| invalid("prior.file", format!("{}: {e}", path.display())))?;
                let t = TabulatedPrior::new(t.lo, t.hi, t.points, t.values)
                    .map_err(|e| invalid("prior.file", format!("{}: {e}", path.display())))?;
                Ok(PriorSpec::Tabulated(t))
            }
        }
    }
}

/// Prefixes `e` with `file:line:` for the line that sets `key` (or opens its
/// table when the key was left at its default).
fn anchor(path: &Path, text: &str, key: &str, e: anyhow::Error) -> anyhow::Error {
    match key_line(text, key) {
        Some(line) => anyhow!("{}:{line}: {e}", path.display()),
        None if key.is_empty() => anyhow!("{}: {e}", path.display()),
        None => anyhow!("{}: {e} (default value)", path.display()),
    }
}

/// toml reports unknown keys inside tagged sections at the table header;
/// name the key's own line as well.
fn parse_error(path: &Path, text: &str, e: toml::de::Error) -> anyhow::Error {
    let msg = e.message();
    let unknown = msg
        .strip_prefix("unknown field `")
        .and_then(|rest| rest.split_once('`'))
        .map(|(key, _)| key);
    let line = unknown.and_then(|key| {
        text.lines()
            .position(|l| l.split_once('=').is_some_and(|(lhs, _)| lhs.trim() == key))
            .map(|k| (key, k + 1))
    });
    match line {
        Some((key, k)) => anyhow!("{}:{k}: unknown key `{key}`\n{e}", path.display()),
        None => anyhow!("{}: {e}", path.display()),
    }
}

/// 1-based line of a dotted key such as `solver.n`.
pub fn key_line(text: &str, key: &str) -> Option<usize> {
    if key.is_empty() {
        return None;
    }
    let (table, leaf) = match key.rsplit_once('.') {
        Some((t, l)) => (t, l),
        None => ("", key),
    };
    let mut current = String::new();
    let mut header = None;
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == table {
                header = Some(k + 1);
            }
            continue;
        }
        if current != table {
            continue;
        }
        if let Some((lhs, _)) = line.split_once('=') {
            if lhs.trim() == leaf {
                return Some(k + 1);
            }
        }
    }
    header
}

/// Rejects anything but a plain existing file so that error messages stay usable.
pub fn existing_file(path: &Path) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!("no such file: {}", path.display());
    }
    Ok(())
}
