//! Detuning-power grid sweeps and their map files.

use std::f64::consts::TAU;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comb::{LatticeAssignment, Regime};
use crate::config::EffectiveConfig;
use crate::dynamics::AttractorKind;
use crate::comb::Competition;
use crate::model::{Mode, PumpCondition};
use crate::pipeline::{analyze_point, PipelineError};
use crate::spectral::Tooth;
use crate::stability::{threshold_curve, DEFAULT_BRACKET_DBM};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("{path}: {source} ({completed} of {total} points were computed)")]
    Io { path: PathBuf, source: std::io::Error, completed: usize, total: usize },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub config: EffectiveConfig,
    /// Units of the first mechanical frequency.
    pub detunings: Vec<f64>,
    /// Source power (dBm); the line attenuation is subtracted per point.
    pub powers_dbm: Vec<f64>,
    pub parallelism: usize,
    pub output_dir: Option<PathBuf>,
}

impl SweepPlan {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.detunings.is_empty() || self.powers_dbm.is_empty() {
            return Err(SweepError::InvalidPlan("empty grid".into()));
        }
        if self.detunings.iter().chain(&self.powers_dbm).any(|v| !v.is_finite()) {
            return Err(SweepError::InvalidPlan("non-finite grid value".into()));
        }
        if self.parallelism == 0 {
            return Err(SweepError::InvalidPlan("parallelism must be at least 1".into()));
        }
        self.config.validate().map_err(|e| SweepError::InvalidPlan(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub delta_dc_over_omega_m1: f64,
    pub p_d_dbm: f64,
    pub regime: Option<Regime>,
    pub dominant_spacing_hz: Option<f64>,
    pub max_growth_per_s: Option<f64>,
    pub branch: Option<Mode>,
    pub attractor: Option<AttractorKind>,
    pub competition: Option<Competition>,
    /// Failure code for points that did not complete.
    pub error: Option<String>,
    pub teeth: Vec<LatticeAssignment>,
    pub unassigned: Vec<Tooth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOverlay {
    pub delta_dc_over_omega_m1: Vec<f64>,
    /// Source dBm; absent where no onset was found.
    pub threshold_dbm: Vec<Option<f64>>,
    pub branch: Vec<Option<Mode>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepHeader {
    pub format_version: u32,
    pub preset: String,
    pub version: String,
    pub config_sha256: String,
    pub config: EffectiveConfig,
    /// Per record, same order; the only run-dependent field.
    pub wall_time_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub header: SweepHeader,
    /// Sorted by detuning, then power.
    pub records: Vec<SweepRecord>,
    pub threshold: ThresholdOverlay,
}

impl SweepResult {
    pub fn empty(config: &EffectiveConfig) -> Self {
        Self {
            header: header(config, Vec::new()),
            records: Vec::new(),
            threshold: ThresholdOverlay { delta_dc_over_omega_m1: Vec::new(), threshold_dbm: Vec::new(), branch: Vec::new() },
        }
    }

    pub fn without_teeth(&self) -> Self {
        let mut r = self.clone();
        for rec in &mut r.records {
            rec.teeth.clear();
            rec.unassigned.clear();
        }
        r
    }
}

fn header(config: &EffectiveConfig, wall_time_s: Vec<f64>) -> SweepHeader {
    SweepHeader {
        format_version: FORMAT_VERSION,
        preset: config.preset.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config.hash(),
        config: config.clone(),
        wall_time_s,
    }
}

fn run_point(config: &EffectiveConfig, d: f64, p: f64) -> (SweepRecord, f64) {
    let started = Instant::now();
    let params = &config.params;
    let pump = PumpCondition::new(params, d * params.modes[0].omega_m, config.device_dbm(p));
    let mut rec = SweepRecord {
        delta_dc_over_omega_m1: d,
        p_d_dbm: p,
        regime: None,
        dominant_spacing_hz: None,
        max_growth_per_s: None,
        branch: None,
        attractor: None,
        competition: None,
        error: None,
        teeth: Vec::new(),
        unassigned: Vec::new(),
    };
    match analyze_point(params, &pump, &config.pipeline) {
        Ok(a) => {
            rec.regime = Some(a.classification.regime);
            rec.dominant_spacing_hz = Some(a.classification.dominant_spacing);
            rec.max_growth_per_s = Some(a.max_growth);
            rec.branch = Some(a.branch);
            rec.attractor = Some(a.report.kind);
            rec.competition = a.competition;
            rec.teeth = a.classification.assignments;
            rec.unassigned = a.classification.unassigned;
        }
        Err(e) => rec.error = Some(point_error(&e)),
    }
    (rec, started.elapsed().as_secs_f64())
}

fn point_error(e: &PipelineError) -> String {
    e.code().to_string()
}

/// Runs every grid point on a pool of `plan.parallelism` workers.
/// Per-point failures are recorded, not raised.
pub fn run_sweep(plan: &SweepPlan) -> Result<SweepResult, SweepError> {
    plan.validate()?;
    let config = &plan.config;
    let grid: Vec<(f64, f64)> = plan
        .detunings
        .iter()
        .flat_map(|&d| plan.powers_dbm.iter().map(move |&p| (d, p)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.parallelism)
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))?;
    let (mut out, curve) = pool.install(|| {
        let out: Vec<(SweepRecord, f64)> = grid.par_iter().map(|&(d, p)| run_point(config, d, p)).collect();
        let mut dets = plan.detunings.clone();
        dets.sort_by(f64::total_cmp);
        dets.dedup();
        let rad: Vec<f64> = dets.iter().map(|d| d * config.params.modes[0].omega_m).collect();
        (out, (dets, threshold_curve(&config.params, &rad, DEFAULT_BRACKET_DBM)))
    });
    out.sort_by(|a, b| {
        a.0.delta_dc_over_omega_m1
            .total_cmp(&b.0.delta_dc_over_omega_m1)
            .then(a.0.p_d_dbm.total_cmp(&b.0.p_d_dbm))
    });
    let (dets, curve) = curve;
    let threshold = match curve {
        Ok(c) => ThresholdOverlay {
            delta_dc_over_omega_m1: dets,
            threshold_dbm: c
                .threshold_dbm
                .iter()
                .map(|t| t.is_finite().then_some(t + config.line_attenuation_db))
                .collect(),
            branch: c.branch,
        },
        Err(_) => ThresholdOverlay {
            threshold_dbm: vec![None; dets.len()],
            branch: vec![None; dets.len()],
            delta_dc_over_omega_m1: dets,
        },
    };
    let (records, times): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    Ok(SweepResult { header: header(config, times), records, threshold })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFormat {
    Csv,
    Json,
}

impl MapFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MapFormat::Csv => "csv",
            MapFormat::Json => "json",
        }
    }
}

pub const CSV_COLUMNS: &str =
    "delta_dc_over_omega_m1,p_d_dbm,regime,dominant_spacing_hz,max_growth_per_s,attractor,branch,competition,error";

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(String::new, T::to_string)
}

fn write_csv(w: &mut impl Write, r: &SweepResult) -> std::io::Result<()> {
    let h = &r.header;
    writeln!(w, "# format_version: {}", h.format_version)?;
    writeln!(w, "# preset: {}", h.preset)?;
    writeln!(w, "# version: {}", h.version)?;
    writeln!(w, "# config_sha256: {}", h.config_sha256)?;
    writeln!(w, "# config: {}", serde_json::to_string(&h.config)?)?;
    writeln!(w, "# wall_time_s: {}", serde_json::to_string(&h.wall_time_s)?)?;
    writeln!(w, "# threshold: {}", serde_json::to_string(&r.threshold)?)?;
    writeln!(w, "{CSV_COLUMNS}")?;
    for rec in &r.records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            rec.delta_dc_over_omega_m1,
            rec.p_d_dbm,
            opt(&rec.regime),
            opt(&rec.dominant_spacing_hz),
            opt(&rec.max_growth_per_s),
            opt(&rec.attractor),
            rec.branch.map_or("", |m| m.as_str()),
            rec.competition.map_or("", |c| c.as_str()),
            rec.error.as_deref().unwrap_or(""),
        )?;
    }
    Ok(())
}

/// Writes the map; I/O errors carry the path.
pub fn export_map(result: &SweepResult, path: &Path, format: MapFormat) -> Result<(), SweepError> {
    let io = |source: std::io::Error| SweepError::Io {
        path: path.to_path_buf(),
        source,
        completed: result.records.len(),
        total: result.records.len(),
    };
    let file = std::fs::File::create(path).map_err(io)?;
    let mut w = std::io::BufWriter::new(file);
    match format {
        MapFormat::Csv => write_csv(&mut w, result).map_err(io)?,
        MapFormat::Json => {
            serde_json::to_writer_pretty(&mut w, result).map_err(|e| io(e.into()))?;
            writeln!(w).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn parse_opt<T: std::str::FromStr>(s: &str) -> Result<Option<T>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| format!("bad field '{s}'"))
    }
}

fn parse_csv(r: impl BufRead) -> Result<SweepResult, String> {
    let mut hdr = std::collections::HashMap::new();
    let mut records = Vec::new();
    let mut seen_columns = false;
    for line in r.lines() {
        let line = line.map_err(|e| e.to_string())?;
        if let Some(rest) = line.strip_prefix("# ") {
            let (k, v) = rest.split_once(": ").ok_or_else(|| format!("bad header line '{line}'"))?;
            hdr.insert(k.to_string(), v.to_string());
            continue;
        }
        if !seen_columns {
            if line != CSV_COLUMNS {
                return Err(format!("unexpected columns '{line}'"));
            }
            seen_columns = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(format!("expected 9 fields in '{line}'"));
        }
        let branch = match f[6] {
            "" => None,
            "cavity" => Some(Mode::Cavity),
            "mode1" => Some(Mode::Mode1),
            "mode2" => Some(Mode::Mode2),
            s => return Err(format!("bad branch '{s}'")),
        };
        let competition = match f[7] {
            "" => None,
            "mode1_wins" => Some(Competition::Mode1Wins),
            "mode2_wins" => Some(Competition::Mode2Wins),
            "coexist" => Some(Competition::Coexist),
            s => return Err(format!("bad competition '{s}'")),
        };
        records.push(SweepRecord {
            delta_dc_over_omega_m1: f[0].parse().map_err(|_| format!("bad detuning '{}'", f[0]))?,
            p_d_dbm: f[1].parse().map_err(|_| format!("bad power '{}'", f[1]))?,
            regime: parse_opt(f[2])?,
            dominant_spacing_hz: parse_opt(f[3])?,
            max_growth_per_s: parse_opt(f[4])?,
            attractor: parse_opt(f[5])?,
            branch,
            competition,
            error: parse_opt(f[8])?,
            teeth: Vec::new(),
            unassigned: Vec::new(),
        });
    }
    let get = |k: &str| hdr.get(k).ok_or_else(|| format!("missing header '{k}'"));
    let json = |k: &str| -> Result<serde_json::Value, String> { serde_json::from_str(get(k)?).map_err(|e| e.to_string()) };
    let format_version: u32 = get("format_version")?.parse().map_err(|_| "bad format_version".to_string())?;
    if format_version != FORMAT_VERSION {
        return Err(format!("unsupported format_version {format_version}"));
    }
    let header = SweepHeader {
        format_version,
        preset: get("preset")?.clone(),
        version: get("version")?.clone(),
        config_sha256: get("config_sha256")?.clone(),
        config: serde_json::from_value(json("config")?).map_err(|e| e.to_string())?,
        wall_time_s: serde_json::from_value(json("wall_time_s")?).map_err(|e| e.to_string())?,
    };
    let threshold = serde_json::from_value(json("threshold")?).map_err(|e| e.to_string())?;
    Ok(SweepResult { header, records, threshold })
}

/// Reads a map written by [`export_map`]. CSV maps carry no tooth lists.
pub fn import_map(path: &Path, format: MapFormat) -> Result<SweepResult, SweepError> {
    let fmt = |message: String| SweepError::Format { path: path.to_path_buf(), message };
    let file = std::fs::File::open(path).map_err(|source| SweepError::Io { path: path.to_path_buf(), source, completed: 0, total: 0 })?;
    let r = std::io::BufReader::new(file);
    let result: SweepResult = match format {
        MapFormat::Csv => parse_csv(r).map_err(fmt)?,
        MapFormat::Json => serde_json::from_reader(r).map_err(|e| fmt(e.to_string()))?,
    };
    if result.header.format_version != FORMAT_VERSION {
        return Err(fmt(format!("unsupported format_version {}", result.header.format_version)));
    }
    Ok(result)
}

/// The run-independent part of a map file: CSV data rows, or the JSON
/// records and threshold overlay.
pub fn data_section(text: &str, format: MapFormat) -> Result<String, String> {
    match format {
        MapFormat::Csv => Ok(text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")),
        MapFormat::Json => {
            let r: SweepResult = serde_json::from_str(text).map_err(|e| e.to_string())?;
            serde_json::to_string(&(&r.records, &r.threshold)).map_err(|e| e.to_string())
        }
    }
}

/// Writes `map.csv`, `map.json` and `threshold.csv` into `dir`.
pub fn write_outputs(result: &SweepResult, dir: &Path) -> Result<Vec<PathBuf>, SweepError> {
    std::fs::create_dir_all(dir).map_err(|source| SweepError::Io {
        path: dir.to_path_buf(),
        source,
        completed: result.records.len(),
        total: result.records.len(),
    })?;
    let mut written = Vec::new();
    for f in [MapFormat::Csv, MapFormat::Json] {
        let path = dir.join(format!("map.{}", f.extension()));
        export_map(result, &path, f)?;
        written.push(path);
    }
    let path = dir.join("threshold.csv");
    let io = |source| SweepError::Io { path: path.clone(), source, completed: result.records.len(), total: result.records.len() };
    let mut text = String::from("delta_dc_over_omega_m1,delta_dc_hz,threshold_dbm,branch\n");
    let f1 = result.header.config.params.modes[0].omega_m / TAU;
    let t = &result.threshold;
    for i in 0..t.delta_dc_over_omega_m1.len() {
        text += &format!(
            "{},{},{},{}\n",
            t.delta_dc_over_omega_m1[i],
            t.delta_dc_over_omega_m1[i] * f1,
            opt(&t.threshold_dbm[i]),
            t.branch[i].map_or("", |m| m.as_str()),
        );
    }
    std::fs::write(&path, text).map_err(io)?;
    written.push(path);
    Ok(written)
}
