//! File formats: grouped CSV data, CSV design matrices behind a JSON
//! manifest, JSON experiment configs, and JSON reports.
//!
//! Matrices are written with Rust's shortest round-trip float formatting,
//! so emitting and re-loading a design reproduces it bit for bit.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::DesignSpec;
use crate::error::{Error, Result};
use crate::estimators::GroupedSample;
use crate::linalg::Matrix;
use crate::scenarios::{self, Scenario, ScenarioKind, TwoWayEffect};
use crate::simulation::{
    default_direction, per_group, theta_for_signal_ratio, CovarianceSpec, ErrorDistribution, MonteCarlo,
};

pub const TOOL_NAME: &str = "gmanova";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

fn parse_cell(path: &Path, line: u64, col: usize, cell: &str) -> Result<f64> {
    let trimmed = cell.trim();
    if trimmed.is_empty() {
        return Err(Error::file(path, format!("row {line}, column {col}: empty cell")));
    }
    let v: f64 = trimmed.parse().map_err(|_| {
        Error::file(
            path,
            format!("row {line}, column {col}: cannot parse '{trimmed}' as a number"),
        )
    })?;
    if !v.is_finite() {
        return Err(Error::file(
            path,
            format!("row {line}, column {col}: non-finite value '{trimmed}'"),
        ));
    }
    Ok(v)
}

fn csv_reader(path: &Path, has_header: bool) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::file(path, e))
}

/// Reads a grouped data file: first column is the group label, the
/// remaining `p` columns are numeric. Rows are regrouped contiguously in
/// order of first label appearance. Reported row numbers are 1-based file
/// lines; columns are 1-based fields.
pub fn load_dataset(path: &Path, has_header: bool) -> Result<GroupedSample> {
    let mut reader = csv_reader(path, has_header)?;
    let mut labels: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut width: Option<usize> = None;
    for record in reader.records() {
        let record = record.map_err(|e| Error::file(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => {
                if record.len() < 2 {
                    return Err(Error::file(
                        path,
                        format!("row {line}: need a label column and at least one value column"),
                    ));
                }
                width = Some(record.len());
            }
            Some(w) if w != record.len() => {
                return Err(Error::file(
                    path,
                    format!("row {line} has {} fields, expected {w}", record.len()),
                ));
            }
            _ => {}
        }
        let label = record[0].to_string();
        if label.is_empty() {
            return Err(Error::file(path, format!("row {line}, column 1: empty group label")));
        }
        let values = record
            .iter()
            .enumerate()
            .skip(1)
            .map(|(c, cell)| parse_cell(path, line, c + 1, cell))
            .collect::<Result<Vec<f64>>>()?;
        let g = *index.entry(label.clone()).or_insert_with(|| {
            labels.push(label);
            rows.push(Vec::new());
            labels.len() - 1
        });
        rows[g].push(values);
    }
    let p = match width {
        Some(w) => w - 1,
        None => return Err(Error::file(path, "no data rows")),
    };
    let sizes: Vec<usize> = rows.iter().map(Vec::len).collect();
    let flat: Vec<f64> = rows.into_iter().flatten().flatten().collect();
    let x = Matrix::from_row_slice(flat.len() / p, p, &flat);
    GroupedSample::new(x, sizes)?.with_labels(labels)
}

/// Errors when some group is smaller than `min`, naming it.
pub fn check_min_group_size(sample: &GroupedSample, min: usize) -> Result<()> {
    for (g, &size) in sample.group_sizes().iter().enumerate() {
        if size < min {
            let name = sample
                .labels()
                .map(|l| format!("'{}'", l[g]))
                .unwrap_or_else(|| g.to_string());
            return Err(Error::Input(format!(
                "group {name} (index {g}) has {size} observations; at least {min} are required"
            )));
        }
    }
    Ok(())
}

/// Reads a headerless numeric CSV matrix.
pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let mut reader = csv_reader(path, false)?;
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::file(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::file(
                    path,
                    format!("row {line} has {} fields, expected {w}", record.len()),
                ))
            }
            _ => {}
        }
        for (c, cell) in record.iter().enumerate() {
            data.push(parse_cell(path, line, c + 1, cell)?);
        }
        rows += 1;
    }
    let cols = width.ok_or_else(|| Error::file(path, "empty matrix file"))?;
    Ok(Matrix::from_row_slice(rows, cols, &data))
}

pub fn write_matrix_csv(m: &Matrix, path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::file(path, e))
}

/// JSON manifest pointing at the four design matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignManifest {
    #[serde(rename = "A")]
    pub a: PathBuf,
    #[serde(rename = "B")]
    pub b: PathBuf,
    #[serde(rename = "L")]
    pub l: PathBuf,
    #[serde(rename = "R")]
    pub r: PathBuf,
    pub group_sizes: Vec<usize>,
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::file(path, format!("schema violation: {e}")))
}

/// Loads a design from its manifest; matrix paths are relative to the manifest.
pub fn load_design(manifest_path: &Path) -> Result<DesignSpec> {
    let manifest: DesignManifest = read_json(manifest_path)?;
    let base = base_dir(manifest_path);
    let a = read_matrix_csv(&base.join(&manifest.a))?;
    let b = read_matrix_csv(&base.join(&manifest.b))?;
    let l = read_matrix_csv(&base.join(&manifest.l))?;
    let r = read_matrix_csv(&base.join(&manifest.r))?;
    DesignSpec::new(a, b, l, r, manifest.group_sizes).map_err(|e| Error::file(manifest_path, e))
}

/// Writes `A.csv`, `B.csv`, `L.csv`, `R.csv` and `manifest.json` into `dir`.
pub fn emit_design(design: &DesignSpec, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    for (name, m) in [
        ("A", design.a()),
        ("B", design.b()),
        ("L", design.l()),
        ("R", design.r()),
    ] {
        write_matrix_csv(m, &dir.join(format!("{name}.csv")))?;
    }
    let manifest = DesignManifest {
        a: "A.csv".into(),
        b: "B.csv".into(),
        l: "L.csv".into(),
        r: "R.csv".into(),
        group_sizes: design.group_sizes().to_vec(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::file(&path, e))?;
    Ok(path)
}

/// Checks a data set against a design (dimension `p`, group partition).
pub fn check_data_against_design(sample: &GroupedSample, design: &DesignSpec, data_path: &Path) -> Result<()> {
    sample.check_against(design).map_err(|e| Error::file(data_path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    tool: &'a str,
    version: &'a str,
    config_hash: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON with every float written to 17 significant digits.
struct SeventeenDigits<'a>(serde_json::ser::PrettyFormatter<'a>);

macro_rules! delegate {
    ($($name:ident$(($arg:ident: $ty:ty))?),* $(,)?) => {$(
        fn $name<W: ?Sized + std::io::Write>(&mut self, w: &mut W $(, $arg: $ty)?) -> std::io::Result<()> {
            self.0.$name(w $(, $arg)?)
        }
    )*};
}

impl serde_json::ser::Formatter for SeventeenDigits<'_> {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        write!(w, "{value:.16e}")
    }
    fn write_f32<W: ?Sized + std::io::Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(w, value as f64)
    }
    delegate!(
        begin_array,
        end_array,
        begin_array_value(first: bool),
        end_array_value,
        begin_object,
        end_object,
        begin_object_key(first: bool),
        begin_object_value,
        end_object_value,
    );
}

/// Serializes to pretty JSON with 17-significant-digit floats. Non-finite
/// values become `null`.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut buf, SeventeenDigits(serde_json::ser::PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Internal(format!("JSON serialization: {e}")))?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// Any report as JSON, stamped with tool name, version and config hash.
pub fn render_report<T: Serialize>(report: &T, config_hash: &str) -> Result<String> {
    to_json(&Envelope {
        tool: TOOL_NAME,
        version: TOOL_VERSION,
        config_hash,
        body: report,
    })
}

pub fn write_report<T: Serialize>(report: &T, config_hash: &str, path: &Path) -> Result<()> {
    let text = render_report(report, config_hash)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
    }
    fs::write(path, text + "\n").map_err(|e| Error::file(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: ScenarioKind,
    /// Group sizes, or cell sizes in row-major order for `two-way`.
    pub groups: Vec<usize>,
    pub p: usize,
    #[serde(default)]
    pub degree: Option<usize>,
    #[serde(default)]
    pub levels: Option<[usize; 2]>,
    #[serde(default)]
    pub effect: Option<TwoWayEffect>,
}

impl ScenarioConfig {
    pub fn build(&self) -> Result<Scenario> {
        match self.name {
            ScenarioKind::OneWay => scenarios::one_way_manova(&self.groups, self.p),
            ScenarioKind::Parallelism => scenarios::profile_parallelism(&self.groups, self.p),
            ScenarioKind::GrowthCurve => {
                let degree = self
                    .degree
                    .ok_or_else(|| Error::Config("growth-curve scenario needs 'degree'".into()))?;
                scenarios::growth_curve(&self.groups, self.p, degree)
            }
            ScenarioKind::TwoWay => {
                let [a, b] = self
                    .levels
                    .ok_or_else(|| Error::Config("two-way scenario needs 'levels': [a, b]".into()))?;
                scenarios::two_way_manova(
                    a,
                    b,
                    &self.groups,
                    self.p,
                    self.effect.unwrap_or(TwoWayEffect::Interaction),
                )
            }
        }
    }
}

/// How `Θ` is chosen for an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaSpec {
    /// `Θ = O` (null hypothesis holds).
    Zero {},
    /// Explicit `k×q` matrix, inline (`values`, row-major) or as a CSV `path`.
    Matrix {
        #[serde(default)]
        values: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        path: Option<PathBuf>,
    },
    /// `Θ = c · direction`, with `c` given directly (`magnitude`) or solved
    /// from a target `𝒬/√σ²` (`signal_ratio`). The default direction puts a
    /// normalised ramp in the first row.
    SignalRay {
        #[serde(default)]
        magnitude: Option<f64>,
        #[serde(default)]
        signal_ratio: Option<f64>,
        #[serde(default)]
        direction: Option<Vec<Vec<f64>>>,
    },
}

impl Default for ThetaSpec {
    fn default() -> Self {
        ThetaSpec::Zero {}
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    let cols = rows.first().map(Vec::len).unwrap_or(0);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Config(format!("{what} must be a non-empty rectangular array")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Matrix::from_row_slice(rows.len(), cols, &flat))
}

fn default_distribution() -> OneOrMany<ErrorDistribution> {
    OneOrMany::One(ErrorDistribution::Gaussian)
}
fn default_covariance() -> OneOrMany<CovarianceSpec> {
    OneOrMany::One(CovarianceSpec::identity())
}
fn default_alpha() -> f64 {
    0.05
}
fn default_reps() -> usize {
    1000
}

/// Monte Carlo experiment description (`simulate` / `diagnose`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
    /// Path to a design manifest, alternative to `scenario`.
    #[serde(default)]
    pub design: Option<PathBuf>,
    #[serde(default = "default_distribution")]
    pub distribution: OneOrMany<ErrorDistribution>,
    #[serde(default = "default_covariance")]
    pub covariance: OneOrMany<CovarianceSpec>,
    #[serde(default)]
    pub theta: ThetaSpec,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Directory relative paths resolve against; set by [`ExperimentConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// A validated experiment ready to run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    pub monte_carlo: MonteCarlo,
    pub reps: usize,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("schema violation: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut config = Self::parse(&text).map_err(|e| Error::file(path, e))?;
        config.base_dir = base_dir(path);
        Ok((config, sha256_hex(text.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.scenario, &self.design) {
            (Some(_), Some(_)) => return Err(Error::Config("give either 'scenario' or 'design', not both".into())),
            (None, None) => return Err(Error::Config("one of 'scenario' or 'design' is required".into())),
            _ => {}
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.reps < 100 {
            return Err(Error::Config(format!("reps must be at least 100, got {}", self.reps)));
        }
        for d in self.distribution.to_vec() {
            d.validate()?;
        }
        if let ThetaSpec::SignalRay {
            magnitude,
            signal_ratio,
            ..
        } = &self.theta
        {
            if magnitude.is_some() == signal_ratio.is_some() {
                return Err(Error::Config(
                    "signal_ray theta needs exactly one of 'magnitude' or 'signal_ratio'".into(),
                ));
            }
        }
        if let ThetaSpec::Matrix { values, path } = &self.theta {
            if values.is_some() == path.is_some() {
                return Err(Error::Config(
                    "matrix theta needs exactly one of 'values' or 'path'".into(),
                ));
            }
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn design(&self) -> Result<(String, DesignSpec)> {
        match (&self.scenario, &self.design) {
            (Some(s), _) => {
                let sc = s.build()?;
                Ok((sc.name, sc.design))
            }
            (None, Some(path)) => {
                let full = self.resolve(path);
                Ok((full.display().to_string(), load_design(&full)?))
            }
            (None, None) => Err(Error::Config("one of 'scenario' or 'design' is required".into())),
        }
    }

    pub fn build(&self) -> Result<Experiment> {
        let (name, design) = self.design()?;
        let covariances = per_group(&self.covariance.to_vec(), design.groups(), "covariance")?;
        let shape = (design.k(), design.q());
        let check_shape = |m: Matrix, what: &str| -> Result<Matrix> {
            if m.shape() != shape {
                return Err(Error::Config(format!(
                    "{what} is {}x{} but the design needs {}x{}",
                    m.nrows(),
                    m.ncols(),
                    shape.0,
                    shape.1
                )));
            }
            Ok(m)
        };
        let theta = match &self.theta {
            ThetaSpec::Zero {} => Matrix::zeros(shape.0, shape.1),
            ThetaSpec::Matrix { values: Some(v), .. } => check_shape(rows_to_matrix(v, "theta.values")?, "theta")?,
            ThetaSpec::Matrix { path: Some(p), .. } => check_shape(read_matrix_csv(&self.resolve(p))?, "theta")?,
            ThetaSpec::Matrix { .. } => unreachable!("validated"),
            ThetaSpec::SignalRay {
                magnitude,
                signal_ratio,
                direction,
            } => {
                let dir = match direction {
                    Some(rows) => check_shape(rows_to_matrix(rows, "theta.direction")?, "direction")?,
                    None => default_direction(&design),
                };
                match (magnitude, signal_ratio) {
                    (Some(c), None) => dir * *c,
                    (None, Some(target)) => {
                        let p = design.p();
                        let sigmas = covariances
                            .iter()
                            .map(|c| c.factor(p).map(|f| f.sigma))
                            .collect::<Result<Vec<_>>>()?;
                        theta_for_signal_ratio(&design, &dir, &sigmas, *target)?
                    }
                    _ => unreachable!("validated"),
                }
            }
        };
        let monte_carlo = MonteCarlo::new(
            design,
            theta,
            &covariances,
            &self.distribution.to_vec(),
            self.alpha,
            self.seed,
        )?;
        Ok(Experiment {
            name,
            monte_carlo,
            reps: self.reps,
        })
    }
}
