//! Field dumps, experiment configuration, CSV tables and the run manifest.
//!
//! A dump is one JSON header line followed by little-endian f64 values: the
//! radial coordinates, then the samples row by row.

use crate::error::{Error, Result};
use crate::error_solver::ErrorSystemConfig;
use crate::euler::{CouetteParams, Varpi};
use crate::grid::{graded_s_grid, LogGrid, RadialSpec};
use crate::prandtl::LayerConfig;
use crate::spectral::{CoordKind, Field};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

const DUMP_FORMAT: &str = "pb-disk-field";
const DUMP_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    format: String,
    version: u32,
    kind: String,
    n_theta: usize,
    n_radial: usize,
}

fn describe(kind: CoordKind, n_theta: usize, radial: &[f64]) -> String {
    match (radial.first(), radial.last()) {
        (Some(a), Some(b)) => format!("{} {}x{} on [{a}, {b}]", kind.as_str(), radial.len(), n_theta),
        _ => format!("{} empty", kind.as_str()),
    }
}

pub fn dump_field(path: &Path, f: &Field) -> Result<()> {
    let header = DumpHeader {
        format: DUMP_FORMAT.into(),
        version: DUMP_VERSION,
        kind: f.kind.as_str().into(),
        n_theta: f.n_theta,
        n_radial: f.n_radial(),
    };
    let mut buf = serde_json::to_vec(&header)?;
    buf.push(b'\n');
    buf.reserve(8 * (f.radial.len() + f.data.len()));
    for x in f.radial.iter().chain(&f.data) {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<Field> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Corruption(format!("{}: no header line", path.display())));
    }
    let head: serde_json::Value =
        serde_json::from_slice(&line).map_err(|e| Error::Corruption(format!("{}: header: {e}", path.display())))?;
    if head.get("format").and_then(|v| v.as_str()) != Some(DUMP_FORMAT) {
        return Err(Error::Corruption(format!("{}: not a field dump", path.display())));
    }
    let version = head.get("version").and_then(|v| v.as_u64());
    if version != Some(DUMP_VERSION as u64) {
        return Err(Error::Version(format!("{}: dump version {version:?}, expected {DUMP_VERSION}", path.display())));
    }
    let head: DumpHeader =
        serde_json::from_value(head).map_err(|e| Error::Corruption(format!("{}: header: {e}", path.display())))?;
    let kind = CoordKind::parse(&head.kind)
        .ok_or_else(|| Error::Version(format!("{}: unknown coordinate kind {:?}", path.display(), head.kind)))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let want = head.n_radial.checked_mul(head.n_theta + 1).and_then(|n| n.checked_mul(8));
    if want != Some(payload.len()) {
        return Err(Error::Corruption(format!(
            "{}: payload has {} bytes, header ({} x {}) needs {:?}",
            path.display(),
            payload.len(),
            head.n_radial,
            head.n_theta,
            want
        )));
    }
    let mut vals = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let radial: Vec<f64> = vals.by_ref().take(head.n_radial).collect();
    let data: Vec<f64> = vals.collect();
    Ok(Field { kind, n_theta: head.n_theta, radial: Arc::new(radial), data })
}

/// Load and insist on a grid; the error names both grids.
pub fn load_field_on(path: &Path, kind: CoordKind, n_theta: usize, radial: &[f64]) -> Result<Field> {
    let f = load_field(path)?;
    if f.kind != kind || f.n_theta != n_theta || *f.radial != radial {
        return Err(Error::Shape(format!(
            "{}: dump grid {} does not match expected grid {}",
            path.display(),
            describe(f.kind, f.n_theta, &f.radial),
            describe(kind, n_theta, radial)
        )));
    }
    Ok(f)
}

// ---------------------------------------------------------------------------
// configuration

/// Flat experiment configuration; every key has a default.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub alpha: f64,
    pub eta: f64,
    pub b: f64,
    /// ϖ = Σ c_k cos kθ + s_k sin kθ, k from 1
    pub varpi_cos: Vec<f64>,
    pub varpi_sin: Vec<f64>,
    pub n_theta: usize,
    pub h_wall: f64,
    pub band: f64,
    pub growth: f64,
    pub h_max: f64,
    pub s_max: f64,
    pub y_min: f64,
    pub dy: f64,
    pub order: usize,
    pub epsilons: Vec<f64>,
    pub newton_tol: f64,
    pub max_newton: usize,
    pub damping: f64,
    pub mode_cap: usize,
    pub seed: u64,
    pub inequality_samples: usize,
    /// interior radius for the vorticity metrics
    pub vorticity_radius: f64,
    pub write_dumps: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let radial = RadialSpec::default();
        let layer = LayerConfig::default();
        let solver = ErrorSystemConfig::default();
        ExperimentConfig {
            alpha: 1.0,
            eta: 0.1,
            b: 0.4,
            varpi_cos: vec![1.0],
            varpi_sin: vec![],
            n_theta: 16,
            h_wall: radial.h_wall,
            band: radial.band,
            growth: radial.growth,
            h_max: radial.h_max,
            s_max: solver.s_max,
            y_min: layer.y_min,
            dy: layer.dy,
            order: 1,
            epsilons: vec![0.2, 0.1, 0.05],
            newton_tol: solver.newton_tol,
            max_newton: solver.max_newton,
            damping: solver.damping,
            mode_cap: solver.mode_cap,
            seed: 1,
            inequality_samples: 200,
            vorticity_radius: 0.5,
            write_dumps: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value.as_object().ok_or_else(|| Error::Validation("config must be a JSON object".into()))?;
        let known = serde_json::to_value(ExperimentConfig::default())?;
        let known = known.as_object().expect("struct serializes to an object");
        let unknown: Vec<&str> = obj.keys().filter(|k| !known.contains_key(*k)).map(|k| k.as_str()).collect();
        if !unknown.is_empty() {
            return Err(Error::Validation(format!("unknown keys: {}", unknown.join(", "))));
        }
        let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| Error::Validation(format!("bad value: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn varpi(&self) -> Varpi {
        Varpi { cos: self.varpi_cos.clone(), sin: self.varpi_sin.clone() }
    }

    pub fn radial_spec(&self) -> RadialSpec {
        RadialSpec { h_wall: self.h_wall, band: self.band, growth: self.growth, h_max: self.h_max }
    }

    pub fn layer_config(&self) -> LayerConfig {
        LayerConfig { y_min: self.y_min, dy: self.dy, ..LayerConfig::default() }
    }

    pub fn solver_config(&self, eps: f64) -> ErrorSystemConfig {
        ErrorSystemConfig {
            epsilon: eps,
            s_max: self.s_max,
            newton_tol: self.newton_tol,
            max_newton: self.max_newton,
            damping: self.damping,
            mode_cap: self.mode_cap,
        }
    }

    pub fn log_grid(&self, eps: f64) -> Result<LogGrid> {
        LogGrid::new(self.n_theta, graded_s_grid(eps, self.s_max, &self.radial_spec())?)
    }

    pub fn params(&self) -> Result<CouetteParams> {
        CouetteParams::new(self.alpha, self.eta, self.b, self.varpi())
    }

    /// Lists every offending key.
    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        let finite = [
            ("alpha", self.alpha),
            ("eta", self.eta),
            ("b", self.b),
            ("h_wall", self.h_wall),
            ("band", self.band),
            ("growth", self.growth),
            ("h_max", self.h_max),
            ("s_max", self.s_max),
            ("y_min", self.y_min),
            ("dy", self.dy),
            ("newton_tol", self.newton_tol),
            ("damping", self.damping),
            ("vorticity_radius", self.vorticity_radius),
        ];
        for (k, v) in finite {
            if !v.is_finite() {
                bad.push(format!("{k} (not finite)"));
            }
        }
        if self.varpi_cos.iter().chain(&self.varpi_sin).any(|x| !x.is_finite()) {
            bad.push("varpi_cos/varpi_sin (not finite)".into());
        }
        if self.n_theta < 8 || self.n_theta % 2 != 0 {
            bad.push("n_theta (even, >= 8)".into());
        } else if self.varpi_cos.len().max(self.varpi_sin.len()) >= self.n_theta / 2 {
            bad.push("varpi_cos/varpi_sin (not resolved by n_theta)".into());
        }
        if !(self.h_wall > 0.0) || !(self.h_max > 0.0) || !(self.band >= 0.0) || !(self.growth >= 1.0) {
            bad.push("h_wall/h_max/band/growth (positive, growth >= 1)".into());
        }
        if !(self.y_min < 0.0) || !(self.dy > 0.0) {
            bad.push("y_min/dy (y_min < 0 < dy)".into());
        }
        if self.order > 2 {
            bad.push("order (0, 1 or 2)".into());
        }
        if self.epsilons.is_empty() {
            bad.push("epsilons (empty)".into());
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0 && *e < 0.5)) {
            bad.push("epsilons (each in (0, 0.5))".into());
        }
        if self.epsilons.windows(2).any(|w| !(w[1] < w[0])) {
            bad.push("epsilons (strictly decreasing)".into());
        }
        if !(self.vorticity_radius > 0.0 && self.vorticity_radius < 1.0) {
            bad.push("vorticity_radius (in (0, 1))".into());
        }
        if self.inequality_samples == 0 {
            bad.push("inequality_samples (positive)".into());
        }
        if let Some(e) = self.epsilons.first() {
            if let Err(Error::Validation(msg)) = self.solver_config(*e).validate() {
                bad.push(msg);
            }
        }
        if bad.is_empty() {
            if let Err(e) = self.params() {
                bad.push(format!("alpha/eta/b/varpi: {e}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid config keys: {}", bad.join("; "))))
        }
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// tables

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A CSV with a fixed header; cells are preformatted strings.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Table> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
        let rows = r.records().map(|rec| rec.map(|x| x.iter().map(String::from).collect())).collect::<std::result::Result<_, _>>().map_err(csv_err)?;
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| *h == name).ok_or_else(|| Error::Corruption(format!("table has no column {name}")))
    }

    pub fn f64_at(&self, row: usize, name: &str) -> Result<f64> {
        let c = self.column(name)?;
        self.rows[row][c].parse().map_err(|_| Error::Corruption(format!("column {name}, row {row}: not a number")))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

// ---------------------------------------------------------------------------
// manifest

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ArtifactRecord {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub code_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub stages: Vec<StageTiming>,
    pub artifacts: Vec<ArtifactRecord>,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Manifest {
            code_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            stages: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    /// Record (or refresh) an artifact under `dir`.
    pub fn record(&mut self, dir: &Path, name: &str) -> Result<()> {
        let bytes = std::fs::read(dir.join(name))?;
        let rec = ArtifactRecord { path: name.into(), bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) };
        match self.artifacts.iter_mut().find(|a| a.path == name) {
            Some(a) => *a = rec,
            None => self.artifacts.push(rec),
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
