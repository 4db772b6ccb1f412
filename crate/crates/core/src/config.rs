//! Layered run configuration: preset, then a TOML file, then explicit
//! overrides. Frequencies in the file are ordinary frequencies (Hz) and
//! may carry SI suffixes, e.g. `"380 kHz"`.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{preset, ModelError, SystemParams, PRESET_NAMES};
use crate::pipeline::{PipelineError, PipelineSettings};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("bad quantity '{0}'")]
    Quantity(String),
    #[error("unknown preset '{0}' (known: {known})", known = PRESET_NAMES.join(", "))]
    UnknownPreset(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// A number, or a string with an optional SI prefix and unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quantity {
    Number(f64),
    Text(String),
}

impl Quantity {
    pub fn value(&self) -> Result<f64, ConfigError> {
        match self {
            Quantity::Number(v) => Ok(*v),
            Quantity::Text(s) => parse_si(s),
        }
    }
}

/// Parses `"1.75 MHz"`, `"380k"`, `"2.32 Hz"`, `"5.31e9"`. Only the
/// prefix is interpreted; a trailing `Hz` is accepted and dropped.
pub fn parse_si(text: &str) -> Result<f64, ConfigError> {
    let err = || ConfigError::Quantity(text.to_string());
    let s = text.trim();
    let s = s.strip_suffix("Hz").unwrap_or(s).trim_end();
    let split = s
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_ascii_digit() || *c == '.')
        .map(|(i, c)| i + c.len_utf8())
        .ok_or_else(err)?;
    let (num, prefix) = s.split_at(split);
    let scale = match prefix.trim() {
        "" => 1.0,
        "p" => 1e-12,
        "n" => 1e-9,
        "u" | "µ" => 1e-6,
        "m" => 1e-3,
        "k" => 1e3,
        "M" => 1e6,
        "G" => 1e9,
        "T" => 1e12,
        _ => return Err(err()),
    };
    let v: f64 = num.trim().parse().map_err(|_| err())?;
    if !v.is_finite() {
        return Err(err());
    }
    Ok(v * scale)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    pub f_c: Option<Quantity>,
    pub kappa: Option<Quantity>,
    pub kappa_e: Option<Quantity>,
    pub f_m1: Option<Quantity>,
    pub gamma_1: Option<Quantity>,
    pub g_1: Option<Quantity>,
    pub f_m2: Option<Quantity>,
    pub gamma_2: Option<Quantity>,
    pub g_2: Option<Quantity>,
}

impl ParamOverrides {
    pub fn apply(&self, p: &mut SystemParams) -> Result<(), ConfigError> {
        let set = |slot: &mut f64, q: &Option<Quantity>| -> Result<(), ConfigError> {
            if let Some(q) = q {
                *slot = TAU * q.value()?;
            }
            Ok(())
        };
        set(&mut p.omega_c, &self.f_c)?;
        set(&mut p.kappa, &self.kappa)?;
        set(&mut p.kappa_e, &self.kappa_e)?;
        set(&mut p.modes[0].omega_m, &self.f_m1)?;
        set(&mut p.modes[0].gamma, &self.gamma_1)?;
        set(&mut p.modes[0].g, &self.g_1)?;
        set(&mut p.modes[1].omega_m, &self.f_m2)?;
        set(&mut p.modes[1].gamma, &self.gamma_2)?;
        set(&mut p.modes[1].g, &self.g_2)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpSection {
    /// Units of the first mechanical frequency.
    pub detuning: Option<f64>,
    pub power_dbm: Option<f64>,
    /// Loss between the quoted source power and the cavity input (dB).
    pub line_attenuation_db: Option<f64>,
}

/// Detuning axis in units of the first mechanical frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DetuningGrid {
    Values { values: Vec<f64> },
    Range { start: f64, stop: f64, count: usize },
}

impl DetuningGrid {
    pub fn points(&self) -> Result<Vec<f64>, ConfigError> {
        let v = match self {
            DetuningGrid::Values { values } => values.clone(),
            DetuningGrid::Range { start, stop, count } => linspace(*start, *stop, *count),
        };
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(ConfigError::Grid(format!("detuning grid {self:?}")));
        }
        Ok(v)
    }
}

/// Inclusive power axis in dBm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl PowerGrid {
    pub fn points(&self) -> Result<Vec<f64>, ConfigError> {
        let PowerGrid { start, stop, step } = *self;
        if !(start.is_finite() && stop.is_finite() && step > 0.0 && stop >= start) {
            return Err(ConfigError::Grid(format!("power grid {self:?}")));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| start + i as f64 * step).collect())
    }
}

pub fn linspace(start: f64, stop: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..count).map(|i| start + (stop - start) * i as f64 / (count - 1) as f64).collect(),
    }
}

/// `start:stop:count`, or a single value.
pub fn parse_range(text: &str) -> Result<DetuningGrid, ConfigError> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| ConfigError::Grid(text.to_string()));
    match parts.as_slice() {
        [v] => Ok(DetuningGrid::Values { values: vec![num(v)?] }),
        [a, b, n] => Ok(DetuningGrid::Range {
            start: num(a)?,
            stop: num(b)?,
            count: n.trim().parse().map_err(|_| ConfigError::Grid(text.to_string()))?,
        }),
        _ => Err(ConfigError::Grid(text.to_string())),
    }
}

/// `start:stop:step` in dBm, or a single value.
pub fn parse_power_range(text: &str) -> Result<PowerGrid, ConfigError> {
    let v: Result<Vec<f64>, _> = text.split(':').map(|s| s.trim().parse::<f64>()).collect();
    match v.map_err(|_| ConfigError::Grid(text.to_string()))?.as_slice() {
        [p] => Ok(PowerGrid { start: *p, stop: *p, step: 1.0 }),
        [a, b, s] => Ok(PowerGrid { start: *a, stop: *b, step: *s }),
        _ => Err(ConfigError::Grid(text.to_string())),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub detuning: Option<DetuningGrid>,
    pub power: Option<PowerGrid>,
    pub parallelism: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

/// Contents of a config file; every field optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<String>,
    #[serde(default)]
    pub params: ParamOverrides,
    #[serde(default)]
    pub pump: PumpSection,
    pub pipeline: Option<PipelineSettings>,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }
}

/// Fully resolved configuration; echoed into output headers and hashed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveConfig {
    pub preset: String,
    pub params: SystemParams,
    pub line_attenuation_db: f64,
    pub pipeline: PipelineSettings,
}

impl EffectiveConfig {
    /// Preset values with the file layered on top.
    pub fn resolve(preset_name: Option<&str>, file: Option<&ConfigFile>) -> Result<Self, ConfigError> {
        let name = preset_name
            .map(str::to_string)
            .or_else(|| file.and_then(|f| f.preset.clone()))
            .unwrap_or_else(|| "desk-scale".to_string());
        let base = preset(&name).ok_or_else(|| ConfigError::UnknownPreset(name.clone()))?;
        let mut params = base.params;
        let mut line_attenuation_db = 0.0;
        let mut pipeline = PipelineSettings::default();
        if let Some(f) = file {
            f.params.apply(&mut params)?;
            if let Some(a) = f.pump.line_attenuation_db {
                line_attenuation_db = a;
            }
            if let Some(p) = f.pipeline {
                pipeline = p;
            }
        }
        let cfg = Self { preset: name, params, line_attenuation_db, pipeline };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.params.validate()?;
        self.pipeline.validate()?;
        if !self.line_attenuation_db.is_finite() {
            return Err(ConfigError::Grid("line attenuation must be finite".into()));
        }
        Ok(())
    }

    /// Power at the cavity input for a quoted source power.
    pub fn device_dbm(&self, source_dbm: f64) -> f64 {
        source_dbm - self.line_attenuation_db
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}
