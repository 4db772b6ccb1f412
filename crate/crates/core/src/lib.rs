//! Two-mode cavity electromechanics: classical equations of motion, linear
//! stability, output spectra and frequency-comb classification.

pub mod bessel;
pub mod comb;
pub mod config;
pub mod dynamics;
mod integrator;
pub mod model;
pub mod pipeline;
pub mod stability;
pub mod sweep;
mod signal;
pub mod spectral;

pub use dynamics::{
    integrate, settle, AttractorKind, AttractorReport, DynamicsError, SettleCriteria, Trajectory,
    UniformWindow,
};
pub use model::{
    dbm_to_flux, eom_rhs, flux_to_dbm, static_fixed_points, MechMode, Mode, ModelError,
    ParameterPreset, PumpCondition, SystemParams, SystemState, HBAR,
};
pub use stability::{
    analyze_fixed_point, first_threshold, jacobian, max_growth_rate, threshold_curve, threshold_power,
    StabilityError, StabilityReport, Threshold, ThresholdCurve,
};
pub use spectral::{field_psd, find_teeth, output_field, psd, OutputField, SpectralError, Spectrum, Tooth, Window};
pub use comb::{
    bessel_comb, classify, competition_outcome, lattice_fit, BesselComb, CombClassification, CombError,
    Competition, LatticeAssignment, LatticeFit, Regime,
};
pub use config::{ConfigError, ConfigFile, EffectiveConfig};
pub use pipeline::{analyze_point, PipelineError, PipelineSettings, PointAnalysis};
pub use sweep::{export_map, import_map, run_sweep, MapFormat, SweepError, SweepPlan, SweepRecord, SweepResult};
