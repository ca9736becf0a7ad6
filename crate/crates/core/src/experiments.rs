//! Reproducible scenario runner: JSON configuration with dotted-path
//! overrides, content-hashed run directories, parallel sweeps and the
//! threshold report.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diagnostics::{
    snorm_accumulate, trailing_increment, virial_residuals, write_virial_csv, DiagnosticsConfig,
    DiagnosticsError,
};
use crate::evolution::{
    self, data_support, Boundary, Classification, EvolutionConfig, EvolutionError, RunRecord,
    Thresholds,
};
use crate::fields::{total_energy, FieldError, FieldState, RadialGrid};
use crate::fmt_f64;
use crate::geometry::{bisect, check_assumptions, GeometryError, GeometrySpec, TargetGeometry};
use crate::harmonic_map::{
    sample_q_scaled_v, solve_q, HarmonicMapError, DEFAULT_DS, DEFAULT_S_RANGE,
};

/// Environment variable capping sweep parallelism.
pub const THREADS_ENV: &str = "CRITWAVE_THREADS";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("geometry assumption failure: {0}")]
    Geometry(#[from] GeometryError),
    #[error("{0}")]
    Instability(String),
    #[error(transparent)]
    HarmonicMap(#[from] HarmonicMapError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl ExperimentError {
    /// Process exit status: 2 config, 3 geometry, 4 instability, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Geometry(_) => 3,
            ExperimentError::Instability(_) => 4,
            ExperimentError::Diagnostics(DiagnosticsError::Parameters(_)) => 2,
            _ => 1,
        }
    }
}

impl From<EvolutionError> for ExperimentError {
    fn from(e: EvolutionError) -> Self {
        match e {
            EvolutionError::Instability { .. } => ExperimentError::Instability(e.to_string()),
            other => ExperimentError::Config(other.to_string()),
        }
    }
}

impl From<FieldError> for ExperimentError {
    fn from(e: FieldError) -> Self {
        ExperimentError::Config(e.to_string())
    }
}

fn config_err(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeometrySource {
    Inline(GeometrySpec),
    File { path: PathBuf },
}

impl Default for GeometrySource {
    fn default() -> Self {
        GeometrySource::Inline(GeometrySpec::Sphere)
    }
}

impl GeometrySource {
    pub fn resolve(&self) -> Result<GeometrySpec, ExperimentError> {
        match self {
            GeometrySource::Inline(spec) => Ok(spec.clone()),
            GeometrySource::File { path } => {
                let text = fs::read_to_string(path)
                    .map_err(|e| config_err(format!("geometry file {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| config_err(format!("geometry file {}: {e}", path.display())))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityBump {
    pub b: f64,
    pub r0: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialData {
    #[default]
    Zero,
    /// `a (r/r0)^k exp(−((r−r0)/w)²)` windowed to `|r − r0| ≤ 4w`.
    /// Either `a` or `energy_fraction` (of `E(Q)`) is given.
    GaussianBump {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a: Option<f64>,
        r0: f64,
        w: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        energy_fraction: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        velocity: Option<VelocityBump>,
    },
    /// `u = Q(λr)`, `u_t = 0`.
    ScaledQ {
        lambda: f64,
    },
    /// Columns `r,u[,u_t]` on the grid nodes.
    CustomCsv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_cells: usize,
    pub r_max: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n_cells: 4096,
            r_max: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    /// `δ` as a fraction of `E(Q)`.
    pub delta_fraction: f64,
    pub n_profiles: usize,
    /// Profiles are rescaled to this fraction of `E(Q) + δ`.
    pub energy_fraction: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            delta_fraction: 0.1,
            n_profiles: 200,
            energy_fraction: 0.99,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub geometry: GeometrySource,
    pub initial_data: InitialData,
    pub grid: GridConfig,
    pub evolution: EvolutionConfig,
    pub diagnostics: DiagnosticsConfig,
    pub thresholds: Thresholds,
    pub scan: ScanConfig,
    pub seed: u64,
}

/// Sets `path` (dot separated, numeric segments index arrays) inside `root`.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), ExperimentError> {
    if path.is_empty() {
        return Err(config_err("empty override path"));
    }
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| {
                    config_err(format!("'{part}' in '{path}' is not an array index"))
                })?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    config_err(format!("index {idx} out of range ({len}) in '{path}'"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Null => {
                *cur = Value::Object(Default::default());
                if let Value::Object(map) = cur {
                    if last {
                        map.insert(part.to_string(), value);
                        return Ok(());
                    }
                    map.entry(part.to_string())
                        .or_insert_with(|| Value::Object(Default::default()))
                } else {
                    unreachable!()
                }
            }
            _ => {
                return Err(config_err(format!(
                    "'{path}' descends into a scalar at '{part}'"
                )))
            }
        };
    }
    Ok(())
}

/// Parses `key=value`; the value is read as JSON when possible, else as a string.
pub fn parse_override(s: &str) -> Result<(String, Value), ExperimentError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| config_err(format!("override '{s}' is not key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl ScenarioConfig {
    pub fn from_value(v: Value) -> Result<Self, ExperimentError> {
        serde_json::from_value(v).map_err(|e| config_err(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    /// Reads a config file (or the defaults when `path` is `None`) and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ExperimentError> {
        let mut value = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| config_err(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| config_err(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(ScenarioConfig::default()).expect("serializable"),
        };
        for o in overrides {
            let (k, v) = parse_override(o)?;
            set_path(&mut value, &k, v)?;
        }
        Self::from_value(value)
    }

    pub fn with_override(&self, path: &str, value: Value) -> Result<Self, ExperimentError> {
        let mut v = self.to_value();
        set_path(&mut v, path, value)?;
        Self::from_value(v)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("serializable")
    }

    /// Compact JSON with sorted keys.
    pub fn canonical_json(&self) -> String {
        self.to_value().to_string()
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// Copy with the geometry inlined from its file, if any.
    pub fn resolved(&self) -> Result<Self, ExperimentError> {
        let mut c = self.clone();
        c.geometry = GeometrySource::Inline(self.geometry.resolve()?);
        Ok(c)
    }

    pub fn evolution_config(&self) -> EvolutionConfig {
        let mut e = self.evolution.clone();
        e.diagnostics = self.diagnostics.clone();
        e
    }

    pub fn build_grid(&self) -> Result<RadialGrid, ExperimentError> {
        Ok(RadialGrid::new(self.grid.n_cells, self.grid.r_max)?)
    }

    /// Structural checks that do not need the geometry.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let grid = self.build_grid()?;
        self.evolution.validate()?;
        let t = &self.thresholds;
        if !(t.dispersal_fraction > 0.0 && t.snorm_trailing > 0.0 && t.stationary_factor > 0.0) {
            return Err(config_err("thresholds must be positive"));
        }
        if !(self.diagnostics.interior_radius > 0.0) {
            return Err(config_err("diagnostics.interior_radius must be positive"));
        }
        for &r in &self.diagnostics.tail_radii {
            if !(r >= 0.0 && r < grid.r_max()) {
                return Err(config_err(format!("tail radius {r} outside [0, r_max)")));
            }
        }
        if let Some(r) = self.diagnostics.virial_radius {
            if !(r > 0.0 && r <= 0.5 * grid.r_max()) {
                return Err(config_err(format!(
                    "virial radius {r} outside (0, r_max/2]"
                )));
            }
        }
        match &self.initial_data {
            InitialData::Zero => {}
            InitialData::GaussianBump {
                a,
                r0,
                w,
                energy_fraction,
                velocity,
            } => {
                if !(*r0 > 0.0 && *w > 0.0) {
                    return Err(config_err("gaussian-bump needs r0 > 0 and w > 0"));
                }
                match (a, energy_fraction) {
                    (Some(_), None) => {}
                    (None, Some(f)) if *f > 0.0 => {}
                    (None, Some(_)) => return Err(config_err("energy_fraction must be positive")),
                    _ => {
                        return Err(config_err(
                            "gaussian-bump needs exactly one of 'a' and 'energy_fraction'",
                        ))
                    }
                }
                if let Some(v) = velocity {
                    if !(v.r0 > 0.0 && v.w > 0.0) {
                        return Err(config_err("velocity bump needs r0 > 0 and w > 0"));
                    }
                }
            }
            InitialData::ScaledQ { lambda } => {
                if !(*lambda > 0.0) {
                    return Err(config_err("scaled-q needs lambda > 0"));
                }
                if self.evolution.boundary == Boundary::DirichletZero {
                    return Err(config_err(
                        "scaled-q data does not vanish at r_max; use boundary dirichlet_frozen",
                    ));
                }
            }
            InitialData::CustomCsv { path } => {
                if !path.exists() {
                    return Err(config_err(format!(
                        "initial data file {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        if let GeometrySource::File { path } = &self.geometry {
            if !path.exists() {
                return Err(config_err(format!(
                    "geometry file {} does not exist",
                    path.display()
                )));
            }
        }
        if self.evolution.boundary == Boundary::DirichletZero {
            if let Some(support) = self.analytic_support() {
                let need = support + self.evolution.t_max + 2.0 * grid.h();
                if grid.r_max() < need - 1e-12 {
                    return Err(config_err(format!(
                        "r_max = {} < support {support} + t_max {} + 2h; the light cone reaches the boundary",
                        grid.r_max(),
                        self.evolution.t_max
                    )));
                }
            }
        }
        Ok(())
    }

    /// Support radius of the initial data when known in closed form.
    pub fn analytic_support(&self) -> Option<f64> {
        match &self.initial_data {
            InitialData::Zero => Some(0.0),
            InitialData::GaussianBump {
                r0, w, velocity, ..
            } => {
                let s = bump_support(*r0, *w);
                Some(
                    velocity
                        .as_ref()
                        .map_or(s, |v| s.max(bump_support(v.r0, v.w))),
                )
            }
            _ => None,
        }
    }
}

fn window(x: f64) -> f64 {
    // 1 for x ≤ 3, 0 for x ≥ 4, quintic smoothstep between
    if x <= 3.0 {
        1.0
    } else if x >= 4.0 {
        0.0
    } else {
        let y = x - 3.0;
        1.0 - y * y * y * (10.0 + y * (-15.0 + 6.0 * y))
    }
}

pub fn bump_support(r0: f64, w: f64) -> f64 {
    r0 + 4.0 * w
}

/// `a (r/r0)^k exp(−((r−r0)/w)²)`, tapered to zero between `|r−r0| = 3w` and `4w`.
pub fn gaussian_bump(a: f64, r0: f64, w: f64, k: u32, r: f64) -> f64 {
    let x = (r - r0) / w;
    let win = window(x.abs());
    if win == 0.0 {
        return 0.0;
    }
    a * (r / r0).powi(k as i32) * (-x * x).exp() * win
}

/// Initial state plus a one-line description.
pub fn build_initial(
    cfg: &ScenarioConfig,
    geo: &TargetGeometry,
) -> Result<(FieldState, String), ExperimentError> {
    let grid = cfg.build_grid()?;
    let k = geo.k();
    match &cfg.initial_data {
        InitialData::Zero => Ok((FieldState::zero(grid, k), "zero".into())),
        InitialData::GaussianBump {
            a,
            r0,
            w,
            energy_fraction,
            velocity,
        } => {
            let ut: Vec<f64> = match velocity {
                Some(vb) => grid
                    .nodes()
                    .map(|r| gaussian_bump(vb.b, vb.r0, vb.w, k, r))
                    .collect(),
                None => vec![0.0; grid.len()],
            };
            let make = |amp: f64| -> Result<FieldState, ExperimentError> {
                let u: Vec<f64> = grid
                    .nodes()
                    .map(|r| gaussian_bump(amp, *r0, *w, k, r))
                    .collect();
                Ok(FieldState::from_u(grid, k, &u, &ut)?)
            };
            let amp = match (a, energy_fraction) {
                (Some(a), _) => *a,
                (None, Some(frac)) => {
                    let target = frac * geo.threshold_energy();
                    let e = |amp: f64| make(amp).map(|s| total_energy(&s, geo)).unwrap_or(f64::NAN);
                    if e(0.0) >= target {
                        return Err(config_err(format!(
                            "velocity part alone exceeds energy target {target}"
                        )));
                    }
                    let mut hi = 1.0;
                    while e(hi) < target {
                        hi *= 2.0;
                        if hi > 1e6 {
                            return Err(config_err("energy_fraction unreachable"));
                        }
                    }
                    bisect(|amp| e(amp) - target, 0.0, hi, 1e-15 * hi)
                }
                (None, None) => {
                    return Err(config_err("gaussian-bump needs 'a' or 'energy_fraction'"))
                }
            };
            let desc = format!(
                "gaussian-bump a={} r0={} w={}",
                fmt_f64(amp),
                fmt_f64(*r0),
                fmt_f64(*w)
            );
            Ok((make(amp)?, desc))
        }
        InitialData::ScaledQ { lambda } => {
            let profile = solve_q(geo, DEFAULT_DS, DEFAULT_S_RANGE)?;
            let v = sample_q_scaled_v(&profile, *lambda, &grid);
            let state = FieldState::new(grid, k, 0.0, v, vec![0.0; grid.len()])?;
            Ok((state, format!("scaled-q lambda={}", fmt_f64(*lambda))))
        }
        InitialData::CustomCsv { path } => {
            let state = read_initial_csv(path, grid, k)?;
            Ok((state, format!("custom-csv {}", path.display())))
        }
    }
}

fn read_initial_csv(path: &Path, grid: RadialGrid, k: u32) -> Result<FieldState, ExperimentError> {
    let text =
        fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let mut u = Vec::new();
    let mut ut = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (line_no == 0 && line.starts_with(|c: char| c.is_ascii_alphabetic()))
        {
            continue;
        }
        let cells: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| config_err(format!("{}:{}: {e}", path.display(), line_no + 1)))?;
        if !(2..=3).contains(&cells.len()) {
            return Err(config_err(format!(
                "{}:{}: expected r,u[,u_t]",
                path.display(),
                line_no + 1
            )));
        }
        let j = u.len();
        if j >= grid.len() || (cells[0] - grid.r(j)).abs() > 1e-9 * grid.r_max() {
            return Err(config_err(format!(
                "{}:{}: r = {} does not match grid node {j}",
                path.display(),
                line_no + 1,
                cells[0]
            )));
        }
        u.push(cells[1]);
        ut.push(cells.get(2).copied().unwrap_or(0.0));
    }
    if u.len() != grid.len() {
        return Err(config_err(format!(
            "{}: {} rows for {} grid nodes",
            path.display(),
            u.len(),
            grid.len()
        )));
    }
    Ok(FieldState::from_u(grid, k, &u, &ut)?)
}

/// Geometry for a config, gated on the standing assumptions.
pub fn load_geometry(cfg: &ScenarioConfig) -> Result<TargetGeometry, ExperimentError> {
    let geo = cfg.geometry.resolve()?.build()?;
    let report = check_assumptions(&geo, 1000);
    if !report.all_pass() {
        return Err(GeometryError::Assumptions(report).into());
    }
    Ok(geo)
}

#[derive(Debug)]
pub struct ScenarioOutput {
    pub record: RunRecord,
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Evolves a scenario without writing anything.
pub fn simulate(cfg: &ScenarioConfig) -> Result<RunRecord, ExperimentError> {
    cfg.validate()?;
    let geo = load_geometry(cfg)?;
    let (initial, desc) = build_initial(cfg, &geo)?;
    if cfg.evolution.boundary == Boundary::DirichletZero
        && matches!(cfg.initial_data, InitialData::CustomCsv { .. })
    {
        let need = data_support(&initial) + cfg.evolution.t_max + 2.0 * initial.grid.h();
        if initial.grid.r_max() < need {
            return Err(config_err("custom data: light cone reaches the boundary"));
        }
    }
    Ok(evolution::run(
        &initial,
        &geo,
        &cfg.evolution_config(),
        &cfg.thresholds,
        &desc,
    )?)
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>,
) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    f(&mut w)?;
    w.flush()
}

/// Runs a scenario and writes its artifacts to `out/<config hash>/`.
pub fn run_scenario(cfg: &ScenarioConfig, out: &Path) -> Result<ScenarioOutput, ExperimentError> {
    let cfg = cfg.resolved()?;
    let record = simulate(&cfg)?;
    let dir = out.join(cfg.hash());
    let files = write_record(&cfg, &record, &dir)?;
    Ok(ScenarioOutput { record, dir, files })
}

/// Writes `config.json`, `series.csv`, `summary.json`, `virial.csv` and field snapshots.
pub fn write_record(
    cfg: &ScenarioConfig,
    record: &RunRecord,
    dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let p = dir.join("config.json");
    fs::write(
        &p,
        serde_json::to_string_pretty(&cfg.to_value()).expect("serializable") + "\n",
    )?;
    files.push(p);
    let p = dir.join("series.csv");
    write_file(&p, |w| record.write_series_csv(w))?;
    files.push(p);
    let p = dir.join("summary.json");
    fs::write(
        &p,
        serde_json::to_string_pretty(&record.summary()).expect("serializable") + "\n",
    )?;
    files.push(p);
    let p = dir.join("virial.csv");
    write_file(&p, |w| write_virial_csv(&virial_residuals(record), w))?;
    files.push(p);
    let snap_dir = dir.join("snapshots");
    fs::create_dir_all(&snap_dir)?;
    for s in &record.snapshots {
        let p = snap_dir.join(format!("field_{:08}.csv", s.step));
        write_file(&p, |w| s.state.write_csv(w))?;
        files.push(p);
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepEntry {
    pub value: Value,
    pub classification: Option<Classification>,
    pub energy: f64,
    /// `E / E(Q)`
    pub energy_ratio: f64,
    pub e_drift_rel: f64,
    pub interior_fraction: f64,
    pub snorm_trailing: f64,
    pub run_dir: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub parameter: String,
    pub entries: Vec<SweepEntry>,
    pub manifest: Vec<String>,
}

/// Parallelism after applying the environment cap.
pub fn effective_parallelism(requested: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    let n = requested.max(1);
    cap.map_or(n, |c| n.min(c))
}

fn sweep_entry(base: &ScenarioConfig, parameter: &str, value: &Value, out: &Path) -> SweepEntry {
    let failed = |msg: String| SweepEntry {
        value: value.clone(),
        classification: None,
        energy: f64::NAN,
        energy_ratio: f64::NAN,
        e_drift_rel: f64::NAN,
        interior_fraction: f64::NAN,
        snorm_trailing: f64::NAN,
        run_dir: None,
        error: Some(msg),
    };
    let cfg = match base.with_override(parameter, value.clone()) {
        Ok(c) => c,
        Err(e) => return failed(e.to_string()),
    };
    let eq = match load_geometry(&cfg) {
        Ok(g) => g.threshold_energy(),
        Err(e) => return failed(e.to_string()),
    };
    match run_scenario(&cfg, out) {
        Ok(o) => {
            let rec = &o.record;
            let last = rec.series.last().expect("non-empty series");
            SweepEntry {
                value: value.clone(),
                classification: Some(rec.classification),
                energy: rec.e_initial(),
                energy_ratio: rec.e_initial() / eq,
                e_drift_rel: rec.e_drift_rel(),
                interior_fraction: if last.e > 0.0 {
                    last.e_interior / last.e
                } else {
                    0.0
                },
                snorm_trailing: trailing_increment(&snorm_accumulate(rec)),
                run_dir: o.dir.file_name().map(|s| s.to_string_lossy().into_owned()),
                error: None,
            }
        }
        Err(e) => failed(e.to_string()),
    }
}

/// Independent runs for each value of `parameter`, merged in input order.
/// Writes `sweep.csv` and `sweep.json` to `out`.
pub fn run_sweep(
    base: &ScenarioConfig,
    parameter: &str,
    values: &[Value],
    parallelism: usize,
    out: &Path,
) -> Result<SweepResult, ExperimentError> {
    fs::create_dir_all(out)?;
    let threads = effective_parallelism(parallelism);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| config_err(format!("thread pool: {e}")))?;
    let entries: Vec<SweepEntry> = pool.install(|| {
        values
            .par_iter()
            .map(|v| sweep_entry(base, parameter, v, out))
            .collect()
    });
    let mut manifest: Vec<String> = entries.iter().filter_map(|e| e.run_dir.clone()).collect();
    manifest.push("sweep.csv".into());
    manifest.push("sweep.json".into());
    let result = SweepResult {
        parameter: parameter.to_string(),
        entries,
        manifest,
    };
    write_file(&out.join("sweep.csv"), |w| write_sweep_csv(&result, w))?;
    fs::write(
        out.join("sweep.json"),
        serde_json::to_string_pretty(&result).expect("serializable") + "\n",
    )?;
    Ok(result)
}

pub fn write_sweep_csv(result: &SweepResult, mut w: impl Write) -> io::Result<()> {
    writeln!(w, "value,classification,E,E_over_EQ,e_drift_rel,interior_fraction,snorm_trailing,run_dir,error")?;
    for e in &result.entries {
        let value = match &e.value {
            Value::String(s) => s.clone(),
            v => v.to_string(),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            value.replace(',', ";"),
            e.classification.map_or("error", |c| c.as_str()),
            fmt_f64(e.energy),
            fmt_f64(e.energy_ratio),
            fmt_f64(e.e_drift_rel),
            fmt_f64(e.interior_fraction),
            fmt_f64(e.snorm_trailing),
            e.run_dir.as_deref().unwrap_or(""),
            e.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        )?;
    }
    Ok(())
}

impl SweepResult {
    /// Plain-text dichotomy table.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<24} {:>10} {:>18}\n",
            self.parameter, "E/E(Q)", "classification"
        );
        for e in &self.entries {
            let cls = match (&e.classification, &e.error) {
                (Some(c), _) => c.as_str().to_string(),
                (None, Some(err)) => format!("error: {err}"),
                _ => "error".into(),
            };
            s += &format!(
                "{:<24} {:>10.4} {:>18}\n",
                e.value.to_string(),
                e.energy_ratio,
                cls
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdReport {
    pub geometry: String,
    pub k: u32,
    pub c_star: f64,
    pub d_star: f64,
    pub e_q: f64,
    pub h_at_zero: f64,
    /// `(E, K(E))` for `E ∈ {¼, ½, ¾, 1} · 2E(Q)`.
    pub sup_bounds: Vec<(f64, f64)>,
}

pub fn report_thresholds(geo: &TargetGeometry) -> ThresholdReport {
    let eq = geo.threshold_energy();
    ThresholdReport {
        geometry: geo.tag().to_string(),
        k: geo.k(),
        c_star: geo.c_star(),
        d_star: geo.d_star(),
        e_q: eq,
        h_at_zero: geo.h_at_zero(),
        sup_bounds: [0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|f| (f * 2.0 * eq, geo.sup_bound(f * 2.0 * eq)))
            .collect(),
    }
}

impl std::fmt::Display for ThresholdReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "geometry  {} (k = {})", self.geometry, self.k)?;
        writeln!(f, "C*        {}", self.c_star)?;
        writeln!(f, "D*        {}", self.d_star)?;
        writeln!(f, "E(Q)      {}", self.e_q)?;
        writeln!(f, "h(0)      {}", self.h_at_zero)?;
        for (e, k) in &self.sup_bounds {
            writeln!(f, "K({e:.6}) = {k}")?;
        }
        Ok(())
    }
}
