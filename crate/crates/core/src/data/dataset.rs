//! On-disk dataset layout.
//!
//! A dataset directory holds:
//! - `meta.json`: `{"kind", "N" | ("I", "J"), "F", "interval_minutes", "start_timestamp", "neighborhood"}`
//! - `signals.csv` (one row per step, `N * F` columns, node-major) or
//!   `signals.bin` (24-byte header of little-endian `u64` `(T, N, F)`, then
//!   little-endian `f64` values in `(T, N, F)` row-major order)
//! - `distances.csv` for traffic graphs: dense `N x N` distances, `inf` for unknown pairs

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    build_grid_graph, build_sensor_graph, default_sigma, FeatureTensor, Neighborhood, SpatialGraph,
    DEFAULT_KAPPA, TOD_SLOTS,
};

pub const META_FILE: &str = "meta.json";
pub const SIGNALS_CSV: &str = "signals.csv";
pub const SIGNALS_BIN: &str = "signals.bin";
pub const DISTANCES_CSV: &str = "distances.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    TrafficGraph,
    CrimeGrid,
}

impl DatasetKind {
    /// `(t_in, t_out)` defaults.
    pub fn default_horizons(self) -> (usize, usize) {
        match self {
            DatasetKind::TrafficGraph => (12, 12),
            DatasetKind::CrimeGrid => (30, 1),
        }
    }
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: DatasetKind,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(rename = "I", default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    #[serde(rename = "F")]
    pub features: usize,
    pub interval_minutes: u32,
    pub start_timestamp: String,
    #[serde(default)]
    pub neighborhood: Neighborhood,
}

impl DatasetMeta {
    pub fn n_nodes(&self) -> Result<usize> {
        match (self.kind, self.n, self.rows, self.cols) {
            (DatasetKind::CrimeGrid, _, Some(i), Some(j)) => {
                if let Some(n) = self.n {
                    if n != i * j {
                        return Err(Error::Invalid(format!("N = {n} disagrees with I x J = {}", i * j)));
                    }
                }
                Ok(i * j)
            }
            (DatasetKind::CrimeGrid, ..) => Err(Error::Invalid("crime grid needs I and J".into())),
            (DatasetKind::TrafficGraph, Some(n), ..) => Ok(n),
            (DatasetKind::TrafficGraph, None, ..) => Err(Error::Invalid("traffic graph needs N".into())),
        }
    }

    pub fn grid(&self) -> Option<(usize, usize)> {
        match self.kind {
            DatasetKind::CrimeGrid => self.rows.zip(self.cols),
            DatasetKind::TrafficGraph => None,
        }
    }

    pub fn start(&self) -> Result<NaiveDateTime> {
        parse_timestamp(&self.start_timestamp)
    }
}

/// Accepts `YYYY-MM-DDTHH:MM:SS`, the same with a space, RFC 3339, or a bare date.
pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t);
        }
    }
    if let Ok(t) = chrono::DateTime::parse_from_rfc3339(s) {
        return Ok(t.naive_local());
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight"));
    }
    Err(Error::Invalid(format!("unparseable start timestamp '{s}'")))
}

/// Per-step time-of-day slot (5-minute resolution) and weekday (Monday = 0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeIndex {
    pub tod: Vec<u16>,
    pub dow: Vec<u8>,
}

impl TimeIndex {
    pub fn new(start: NaiveDateTime, interval_minutes: u32, steps: usize) -> Self {
        let mut tod = Vec::with_capacity(steps);
        let mut dow = Vec::with_capacity(steps);
        for k in 0..steps {
            let t = start + Duration::minutes(interval_minutes as i64 * k as i64);
            let minute = t.hour() * 60 + t.minute();
            tod.push(((minute / 5) as usize % TOD_SLOTS) as u16);
            dow.push(t.weekday().num_days_from_monday() as u8);
        }
        Self { tod, dow }
    }

    pub fn len(&self) -> usize {
        self.tod.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tod.is_empty()
    }
}

/// How to read a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub path: PathBuf,
    /// Overrides `meta.json` when set.
    #[serde(default)]
    pub interval_minutes: Option<u32>,
    pub t_in: usize,
    pub t_out: usize,
    pub split: SplitRule,
    /// Gaussian kernel width; standard deviation of the distances when unset.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, path: impl Into<PathBuf>) -> Self {
        let (t_in, t_out) = kind.default_horizons();
        Self {
            kind,
            path: path.into(),
            interval_minutes: None,
            t_in,
            t_out,
            split: SplitRule::default_for(kind),
            sigma: None,
            kappa: DEFAULT_KAPPA,
        }
    }
}

/// Chronological split proportions. With `val_days` set, validation is the
/// final `val_days` of the training windows instead of its own share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub ratio: [f64; 3],
    #[serde(default)]
    pub val_days: Option<usize>,
}

impl SplitRule {
    pub fn default_for(kind: DatasetKind) -> Self {
        match kind {
            DatasetKind::TrafficGraph => Self {
                ratio: [6.0, 2.0, 2.0],
                val_days: None,
            },
            DatasetKind::CrimeGrid => Self {
                ratio: [7.0, 0.0, 1.0],
                val_days: Some(30),
            },
        }
    }
}

/// A loaded dataset in raw units.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub signals: FeatureTensor<f64>,
    pub graph: SpatialGraph,
    pub time: TimeIndex,
}

impl Dataset {
    pub fn n_nodes(&self) -> usize {
        self.signals.nodes()
    }

    pub fn steps_per_day(&self) -> usize {
        ((24 * 60) / self.meta.interval_minutes.max(1)).max(1) as usize
    }
}

fn load_err(path: &Path, reason: impl ToString) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn check_finite(data: &Array3<f64>, path: &Path) -> Result<()> {
    if let Some((idx, v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(load_err(
            path,
            format!("non-finite value {v} at step {}, node {}, feature {}", idx.0, idx.1, idx.2),
        ));
    }
    Ok(())
}

/// Read `signals.csv`: rows are steps, columns node-major `N * F`.
pub fn read_signals_csv(path: &Path, n: usize, f: usize) -> Result<FeatureTensor<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| load_err(path, e))?;
    let mut values = Vec::new();
    let mut steps = 0;
    for (t, record) in reader.records().enumerate() {
        let record = record.map_err(|e| load_err(path, e))?;
        if record.len() != n * f {
            return Err(load_err(path, format!("row {t} has {} columns, expected N*F = {}", record.len(), n * f)));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| load_err(path, format!("row {t}, column {c}: cannot parse '{field}'")))?;
            values.push(v);
        }
        steps += 1;
    }
    if steps == 0 {
        return Err(load_err(path, "signal file is empty"));
    }
    let data = Array3::from_shape_vec((steps, n, f), values).map_err(|e| load_err(path, e))?;
    check_finite(&data, path)?;
    FeatureTensor::new(data)
}

/// Read `signals.bin`; the header must agree with `n` and `f`.
pub fn read_signals_bin(path: &Path, n: usize, f: usize) -> Result<FeatureTensor<f64>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| load_err(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| load_err(path, e))?;
    if bytes.len() < 24 {
        return Err(load_err(path, "signal file is empty or missing its header"));
    }
    let word = |k: usize| u64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().expect("8 bytes")) as usize;
    let (t, hn, hf) = (word(0), word(1), word(2));
    if hn != n || hf != f {
        return Err(load_err(path, format!("header declares N={hn}, F={hf}; meta.json declares N={n}, F={f}")));
    }
    if t == 0 {
        return Err(load_err(path, "signal file has no time steps"));
    }
    let expected = 24 + 8 * t * n * f;
    if bytes.len() != expected {
        return Err(load_err(path, format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let values: Vec<f64> = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let data = Array3::from_shape_vec((t, n, f), values).map_err(|e| load_err(path, e))?;
    check_finite(&data, path)?;
    FeatureTensor::new(data)
}

/// Dense square matrix from CSV; `inf` marks unknown distances.
pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| load_err(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| load_err(path, e))?;
        let row = record
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| load_err(path, format!("row {r}: cannot parse '{s}'"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(load_err(path, "distance matrix must be square and non-empty"));
    }
    Ok(Array2::from_shape_vec((n, n), rows.concat()).expect("square"))
}

pub fn read_meta(dir: &Path) -> Result<DatasetMeta> {
    let path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| load_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| load_err(&path, e))
}

/// Load signals, graph and time indices from `spec.path`.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    let dir = spec.path.as_path();
    let mut meta = read_meta(dir)?;
    if meta.kind != spec.kind {
        return Err(load_err(&dir.join(META_FILE), format!("kind is {:?}, expected {:?}", meta.kind, spec.kind)));
    }
    if let Some(iv) = spec.interval_minutes {
        meta.interval_minutes = iv;
    }
    if meta.interval_minutes == 0 {
        return Err(load_err(&dir.join(META_FILE), "interval_minutes must be positive"));
    }
    let n = meta.n_nodes().map_err(|e| load_err(&dir.join(META_FILE), e))?;
    let f = meta.features;
    if n == 0 || f == 0 {
        return Err(load_err(&dir.join(META_FILE), "N and F must be positive"));
    }
    let bin = dir.join(SIGNALS_BIN);
    let signals = if bin.exists() {
        read_signals_bin(&bin, n, f)?
    } else {
        read_signals_csv(&dir.join(SIGNALS_CSV), n, f)?
    };

    let graph = match meta.kind {
        DatasetKind::TrafficGraph => {
            let path = dir.join(DISTANCES_CSV);
            let dist = read_matrix_csv(&path)?;
            if dist.nrows() != n {
                return Err(load_err(&path, format!("distance matrix is {0}x{0}, signals have N = {n}", dist.nrows())));
            }
            let sigma = spec.sigma.unwrap_or_else(|| default_sigma(&dist));
            build_sensor_graph(&dist, sigma, spec.kappa).map_err(|e| load_err(&path, e))?
        }
        DatasetKind::CrimeGrid => {
            let (i, j) = meta.grid().expect("validated grid");
            build_grid_graph(i, j, meta.neighborhood)?
        }
    };
    let start = meta.start().map_err(|e| load_err(&dir.join(META_FILE), e))?;
    let time = TimeIndex::new(start, meta.interval_minutes, signals.steps());
    Ok(Dataset {
        meta,
        signals,
        graph,
        time,
    })
}

/// Write a dataset directory: `meta.json`, signals (binary or CSV) and, for
/// traffic graphs, `distances.csv`.
pub fn write_dataset(
    dir: &Path,
    meta: &DatasetMeta,
    signals: &FeatureTensor<f64>,
    distances: Option<&Array2<f64>>,
    binary: bool,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(META_FILE), serde_json::to_string_pretty(meta)?)?;
    let (t, n, f) = signals.shape();
    if binary {
        let mut w = BufWriter::new(File::create(dir.join(SIGNALS_BIN))?);
        for v in [t, n, f] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for v in signals.data().iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
    } else {
        let mut w = csv::Writer::from_path(dir.join(SIGNALS_CSV)).map_err(|e| Error::Invalid(e.to_string()))?;
        for step in signals.data().outer_iter() {
            w.write_record(step.iter().map(|v| format!("{v:?}")))
                .map_err(|e| Error::Invalid(e.to_string()))?;
        }
        w.flush()?;
    }
    if let Some(d) = distances {
        let mut w = csv::Writer::from_path(dir.join(DISTANCES_CSV)).map_err(|e| Error::Invalid(e.to_string()))?;
        for row in d.rows() {
            w.write_record(row.iter().map(|v| if v.is_finite() { format!("{v:?}") } else { "inf".into() }))
                .map_err(|e| Error::Invalid(e.to_string()))?;
        }
        w.flush()?;
    }
    Ok(())
}
