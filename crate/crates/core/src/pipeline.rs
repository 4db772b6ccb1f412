//! One operating point end to end: settle, output spectrum, teeth,
//! lattice classification.

use std::f64::consts::TAU;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comb::{classify, competition_outcome, default_tolerance, CombClassification, CombError, Competition, DEFAULT_KMAX};
use crate::dynamics::{settle, AttractorKind, AttractorReport, DynamicsError, SettleCriteria, TailSpec, Trajectory};
use crate::model::{Mode, PumpCondition, SystemParams};
use crate::spectral::{field_psd, find_teeth, output_field, SpectralError, Spectrum, Tooth, MIN_SEGMENT};
use crate::stability::{max_growth_rate, StabilityError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Comb(#[from] CombError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
}

impl PipelineError {
    /// Short stable code recorded for failed sweep points.
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Dynamics(DynamicsError::Divergence { .. }) => "divergence",
            PipelineError::Dynamics(DynamicsError::IntegrationFailure { .. }) => "integration_failure",
            PipelineError::Dynamics(_) => "dynamics",
            PipelineError::Spectral(_) => "spectral",
            PipelineError::Comb(CombError::Ambiguous { .. }) => "ambiguous_lattice",
            PipelineError::Comb(_) => "classifier",
            PipelineError::Stability(_) => "stability",
            PipelineError::InvalidSettings(_) => "invalid_settings",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSettings {
    /// Horizon is `budget_factor / gamma_eff`, gamma_eff estimated from
    /// the leading eigenvalue of the static state.
    pub budget_factor: f64,
    /// Optional wall-clock cap per point (s); hitting it reports Undecided.
    pub wall_cap_s: Option<f64>,
    pub tol: f64,
    /// Length of the analysed tail, in samples at 16 times the upper
    /// mechanical frequency.
    pub tail_samples: usize,
    pub segments: usize,
    pub margin_db: f64,
    pub kmax: i32,
    /// Lattice tolerance (Hz); `max(3 rbw, 1e-3 f1)` when absent.
    pub tol_hz: Option<f64>,
    pub subtract_carrier: bool,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            budget_factor: 200.0,
            wall_cap_s: None,
            tol: 1e-9,
            tail_samples: 1 << 16,
            segments: 4,
            margin_db: 10.0,
            kmax: DEFAULT_KMAX,
            tol_hz: None,
            subtract_carrier: false,
        }
    }
}

impl PipelineSettings {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidSettings(m));
        if !(self.budget_factor > 0.0 && self.budget_factor.is_finite()) {
            return bad(format!("budget_factor {}", self.budget_factor));
        }
        if self.wall_cap_s.is_some_and(|w| !(w > 0.0)) {
            return bad("wall_cap_s must be positive".into());
        }
        if !(1e-12..=1e-3).contains(&self.tol) {
            return bad(format!("tol {}", self.tol));
        }
        if self.segments == 0 || self.tail_samples < 4 * MIN_SEGMENT || 2 * self.tail_samples / (self.segments + 1) < MIN_SEGMENT {
            return bad(format!("{} samples in {} segments", self.tail_samples, self.segments));
        }
        if !(self.margin_db >= 6.0) {
            return bad(format!("margin {} dB", self.margin_db));
        }
        if !(1..=64).contains(&self.kmax) {
            return bad(format!("kmax {}", self.kmax));
        }
        if self.tol_hz.is_some_and(|t| !(t > 0.0)) {
            return bad("tol_hz must be positive".into());
        }
        Ok(())
    }

    pub fn tail(&self, params: &SystemParams) -> TailSpec {
        let rate = 16.0 * params.modes[1].omega_m / TAU;
        TailSpec { duration: self.tail_samples as f64 / rate, sample_rate: rate }
    }

    /// Settle horizon for one point: `budget_factor / gamma_eff` with
    /// `gamma_eff = 2 |Re lambda_max|`, clamped to
    /// `[20, 10 budget_factor] / gamma_min`.
    pub fn horizon(&self, params: &SystemParams, max_growth: f64) -> f64 {
        let gmin = params.modes[0].gamma.min(params.modes[1].gamma);
        let lo = 20.0 / gmin;
        let hi = 10.0 * self.budget_factor / gmin;
        let g_eff = 2.0 * max_growth.abs();
        let h = if g_eff > 0.0 { self.budget_factor / g_eff } else { hi };
        h.clamp(lo, hi.max(lo)).max(4.0 * self.tail(params).duration)
    }

    pub fn criteria(&self, params: &SystemParams, max_growth: f64) -> SettleCriteria {
        let mut c = SettleCriteria::new(params, self.horizon(params, max_growth));
        c.tol = self.tol;
        c.tail = self.tail(params);
        c.wall_cap = self.wall_cap_s.map(Duration::from_secs_f64);
        c
    }
}

/// Mechanical frequencies (Hz) used for the lattice: the measured
/// rotation frequency of each mode when it lies within 5% of the
/// nominal frequency, else the nominal one. A mode only driven at a
/// harmonic of the other rotates at that harmonic and falls back.
pub fn lattice_frequencies(params: &SystemParams, report: &AttractorReport) -> [f64; 2] {
    std::array::from_fn(|j| {
        let nominal = params.modes[j].omega_m / TAU;
        match report.mech_frequency_hz[j] {
            Some(f) if report.kind != AttractorKind::FixedPoint && (f / nominal - 1.0).abs() < 0.05 => f,
            _ => nominal,
        }
    })
}

#[derive(Debug, Clone)]
pub struct PointAnalysis {
    pub pump: PumpCondition,
    pub max_growth: f64,
    pub branch: Mode,
    pub report: AttractorReport,
    pub trajectory: Trajectory,
    pub spectrum: Spectrum,
    pub teeth: Vec<Tooth>,
    pub lattice_freqs: [f64; 2],
    pub tol_hz: f64,
    pub classification: CombClassification,
    pub competition: Option<Competition>,
}

pub fn analyze_point(params: &SystemParams, pump: &PumpCondition, settings: &PipelineSettings) -> Result<PointAnalysis, PipelineError> {
    settings.validate()?;
    let stab = max_growth_rate(params, pump)?;
    let criteria = settings.criteria(params, stab.max_growth);
    let (trajectory, report) = settle(params, pump, &criteria)?;
    let field = output_field(&trajectory, params, pump, settings.subtract_carrier)?;
    let spectrum = field_psd(&field, settings.segments)?;
    let teeth = find_teeth(&spectrum, settings.margin_db)?;
    let lattice_freqs = lattice_frequencies(params, &report);
    let tol_hz = settings.tol_hz.unwrap_or_else(|| default_tolerance(spectrum.rbw, lattice_freqs[0]));
    let classification = classify(&teeth, lattice_freqs[0], lattice_freqs[1], tol_hz, settings.kmax)?;
    let competition = competition_outcome(&report, &classification).ok();
    Ok(PointAnalysis {
        pump: *pump,
        max_growth: stab.max_growth,
        branch: stab.dominant_mode,
        report,
        trajectory,
        spectrum,
        teeth,
        lattice_freqs,
        tol_hz,
        classification,
        competition,
    })
}
