//! Physical model of a cavity coupled to two mechanical modes.
//!
//! Everything here works in SI angular units (rad/s) at the public
//! boundary. The integrator and the stability engine use [`Scaled`], a
//! dimensionless copy where every rate is divided by the mode-1 frequency
//! and time is measured in units of `1/omega_m1`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid state: non-finite component in {0}")]
    InvalidState(&'static str),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("fixed-point root polishing failed in [{lo:e}, {hi:e}] (f(lo)={f_lo:e}, f(hi)={f_hi:e})")]
    RootPolish { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
}

/// Which oscillator of the three-mode system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Cavity,
    Mode1,
    Mode2,
}

impl Mode {
    /// Index into [`SystemParams::modes`] for the mechanical modes.
    pub fn mech_index(self) -> Option<usize> {
        match self {
            Mode::Cavity => None,
            Mode::Mode1 => Some(0),
            Mode::Mode2 => Some(1),
        }
    }

    pub fn from_mech_index(j: usize) -> Self {
        if j == 0 {
            Mode::Mode1
        } else {
            Mode::Mode2
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Cavity => "cavity",
            Mode::Mode1 => "mode1",
            Mode::Mode2 => "mode2",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One mechanical mode: frequency, energy damping rate and single-photon coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechMode {
    /// rad/s
    pub omega_m: f64,
    /// rad/s
    pub gamma: f64,
    /// rad/s
    pub g: f64,
}

/// Device constants. All values are angular rates in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub omega_c: f64,
    pub kappa: f64,
    pub kappa_e: f64,
    pub modes: [MechMode; 2],
}

impl SystemParams {
    /// Checks the physical invariants: positive rates, `kappa_e <= kappa`,
    /// and mode ordering by frequency.
    pub fn validate(&self) -> Result<(), ModelError> {
        let named = [
            ("omega_c", self.omega_c),
            ("kappa", self.kappa),
            ("kappa_e", self.kappa_e),
            ("omega_m1", self.modes[0].omega_m),
            ("gamma_1", self.modes[0].gamma),
            ("g_1", self.modes[0].g),
            ("omega_m2", self.modes[1].omega_m),
            ("gamma_2", self.modes[1].gamma),
            ("g_2", self.modes[1].g),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::InvalidParams(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        if self.kappa_e > self.kappa {
            return Err(ModelError::InvalidParams(format!(
                "kappa_e ({}) exceeds kappa ({})",
                self.kappa_e, self.kappa
            )));
        }
        if self.modes[1].omega_m <= self.modes[0].omega_m {
            return Err(ModelError::InvalidParams(
                "mechanical modes must be ordered by frequency (omega_m2 > omega_m1)".into(),
            ));
        }
        Ok(())
    }

    /// `omega_mj > kappa` for both modes.
    pub fn resolved_sideband(&self) -> bool {
        self.modes.iter().all(|m| m.omega_m > self.kappa)
    }

    /// Copy with both couplings set to zero.
    pub fn decoupled(&self) -> Self {
        let mut p = *self;
        p.modes[0].g = 0.0;
        p.modes[1].g = 0.0;
        p
    }

    /// Copy keeping only the coupling of mechanical mode `j` (0 or 1).
    pub fn single_mode(&self, j: usize) -> Self {
        let mut p = *self;
        p.modes[1 - j].g = 0.0;
        p
    }

    /// Static Kerr coefficient: the effective detuning at photon number `n`
    /// is `delta_dc + kerr() * n`.
    pub fn kerr(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| 2.0 * m.g * m.g * m.omega_m / (m.omega_m * m.omega_m + 0.25 * m.gamma * m.gamma))
            .sum()
    }

    /// Mechanical amplitude at which the cavity phase-modulation index
    /// `2 g |b| / omega_m` reaches one.
    pub fn unit_modulation_amplitude(&self, j: usize) -> f64 {
        let m = &self.modes[j];
        m.omega_m / (2.0 * m.g)
    }
}

/// Pump tone at the cavity input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpCondition {
    /// rad/s
    pub omega_d: f64,
    /// `omega_d - omega_c`, rad/s
    pub delta_dc: f64,
    /// Power at the cavity input (dBm). `-inf` encodes zero power.
    pub p_d_dbm: f64,
    /// Photon-flux amplitude, sqrt(photons/s).
    pub s_in: f64,
}

impl PumpCondition {
    pub fn new(params: &SystemParams, delta_dc: f64, p_d_dbm: f64) -> Self {
        let omega_d = params.omega_c + delta_dc;
        Self {
            omega_d,
            delta_dc: omega_d - params.omega_c,
            p_d_dbm,
            s_in: dbm_to_flux(p_d_dbm, omega_d),
        }
    }

    /// Pump specified by photon-flux amplitude instead of dBm.
    pub fn from_flux(params: &SystemParams, delta_dc: f64, s_in: f64) -> Self {
        let omega_d = params.omega_c + delta_dc;
        Self {
            omega_d,
            delta_dc: omega_d - params.omega_c,
            p_d_dbm: flux_to_dbm(s_in, omega_d),
            s_in,
        }
    }

    pub fn off(params: &SystemParams, delta_dc: f64) -> Self {
        Self::new(params, delta_dc, f64::NEG_INFINITY)
    }

    /// Same detuning, different power.
    pub fn with_dbm(&self, p_d_dbm: f64) -> Self {
        Self {
            p_d_dbm,
            s_in: dbm_to_flux(p_d_dbm, self.omega_d),
            ..*self
        }
    }

    pub fn watts(&self) -> f64 {
        self.s_in * self.s_in * HBAR * self.omega_d
    }
}

/// `S_in = sqrt(P / (hbar omega_d))` with `P = 10^(dBm/10) mW`.
pub fn dbm_to_flux(p_d_dbm: f64, omega_d: f64) -> f64 {
    if p_d_dbm == f64::NEG_INFINITY {
        return 0.0;
    }
    let watts = 10f64.powf(p_d_dbm / 10.0) * 1e-3;
    (watts / (HBAR * omega_d)).sqrt()
}

pub fn flux_to_dbm(s_in: f64, omega_d: f64) -> f64 {
    let watts = s_in * s_in * HBAR * omega_d;
    10.0 * (watts / 1e-3).log10()
}

/// Classical amplitudes: `|a|^2` is the intracavity photon number,
/// `|b_j|^2` the phonon number of mode j.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SystemState {
    pub a: Complex64,
    pub b: [Complex64; 2],
}

impl SystemState {
    pub const ZERO: SystemState = SystemState {
        a: Complex64::new(0.0, 0.0),
        b: [Complex64::new(0.0, 0.0); 2],
    };

    pub fn new(a: Complex64, b1: Complex64, b2: Complex64) -> Self {
        Self { a, b: [b1, b2] }
    }

    /// Real layout `(Re a, Im a, Re b1, Im b1, Re b2, Im b2)`.
    pub fn to_array(&self) -> [f64; 6] {
        [self.a.re, self.a.im, self.b[0].re, self.b[0].im, self.b[1].re, self.b[1].im]
    }

    pub fn from_array(y: &[f64; 6]) -> Self {
        Self {
            a: Complex64::new(y[0], y[1]),
            b: [Complex64::new(y[2], y[3]), Complex64::new(y[4], y[5])],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn photons(&self) -> f64 {
        self.a.norm_sqr()
    }
}

/// Time derivative of the classical amplitudes in the frame rotating at
/// the pump frequency (units of 1/s).
pub fn eom_rhs(
    state: &SystemState,
    params: &SystemParams,
    pump: &PumpCondition,
) -> Result<SystemState, ModelError> {
    if !state.is_finite() {
        return Err(ModelError::InvalidState("eom_rhs input"));
    }
    let i = Complex64::i();
    let n = state.a.norm_sqr();
    let shift: f64 = params
        .modes
        .iter()
        .zip(state.b.iter())
        .map(|(m, b)| m.g * 2.0 * b.re)
        .sum();
    let a_dot = (i * (pump.delta_dc - shift) - 0.5 * params.kappa) * state.a
        + params.kappa_e.sqrt() * pump.s_in;
    let mut b_dot = [Complex64::default(); 2];
    for (j, m) in params.modes.iter().enumerate() {
        b_dot[j] = -(i * m.omega_m + 0.5 * m.gamma) * state.b[j] - i * m.g * n;
    }
    Ok(SystemState { a: a_dot, b: b_dot })
}

/// Dimensionless copy of the model: rates divided by `unit = omega_m1`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Scaled {
    pub unit: f64,
    pub delta: f64,
    pub half_kappa: f64,
    /// `sqrt(kappa_e) * s_in / unit`
    pub drive: f64,
    pub omega: [f64; 2],
    pub half_gamma: [f64; 2],
    pub g: [f64; 2],
}

impl Scaled {
    pub fn new(params: &SystemParams, pump: &PumpCondition) -> Self {
        let unit = params.modes[0].omega_m;
        Self {
            unit,
            delta: pump.delta_dc / unit,
            half_kappa: 0.5 * params.kappa / unit,
            drive: params.kappa_e.sqrt() * pump.s_in / unit,
            omega: [params.modes[0].omega_m / unit, params.modes[1].omega_m / unit],
            half_gamma: [0.5 * params.modes[0].gamma / unit, 0.5 * params.modes[1].gamma / unit],
            g: [params.modes[0].g / unit, params.modes[1].g / unit],
        }
    }

    pub fn kerr(&self) -> f64 {
        (0..2)
            .map(|j| {
                let w = self.omega[j];
                let hg = self.half_gamma[j];
                2.0 * self.g[j] * self.g[j] * w / (w * w + hg * hg)
            })
            .sum()
    }

    /// Right-hand side on the real 6-vector.
    #[inline]
    pub fn rhs(&self, y: &[f64; 6], dy: &mut [f64; 6]) {
        let (x, p) = (y[0], y[1]);
        let n = x * x + p * p;
        let det = self.delta - 2.0 * (self.g[0] * y[2] + self.g[1] * y[4]);
        dy[0] = -det * p - self.half_kappa * x + self.drive;
        dy[1] = det * x - self.half_kappa * p;
        for j in 0..2 {
            let (u, v) = (y[2 + 2 * j], y[3 + 2 * j]);
            dy[2 + 2 * j] = self.omega[j] * v - self.half_gamma[j] * u;
            dy[3 + 2 * j] = -self.omega[j] * u - self.half_gamma[j] * v - self.g[j] * n;
        }
    }
}

/// Static solutions of the equations of motion, sorted by photon number.
///
/// Eliminating the static mechanical displacement gives
/// `n ((kappa/2)^2 + (delta + K n)^2) = kappa_e S_in^2` with `K` the Kerr
/// coefficient. The cubic is split at its critical points into monotone
/// pieces; each sign change is bracketed, bisected and Newton-polished.
pub fn static_fixed_points(
    params: &SystemParams,
    pump: &PumpCondition,
) -> Result<Vec<SystemState>, ModelError> {
    let s = Scaled::new(params, pump);
    let roots = photon_number_roots(&s)?;
    Ok(roots.into_iter().map(|n| state_from_photons(&s, n)).collect())
}

pub(crate) fn state_from_photons(s: &Scaled, n: f64) -> SystemState {
    let i = Complex64::i();
    let det = s.delta + s.kerr() * n;
    let a = s.drive / Complex64::new(s.half_kappa, -det);
    let mut b = [Complex64::default(); 2];
    for j in 0..2 {
        b[j] = -i * s.g[j] * n / Complex64::new(s.half_gamma[j], s.omega[j]);
    }
    SystemState { a, b }
}

pub(crate) fn photon_number_roots(s: &Scaled) -> Result<Vec<f64>, ModelError> {
    let f2 = s.drive * s.drive;
    if f2 == 0.0 {
        return Ok(vec![0.0]);
    }
    let k2 = s.half_kappa * s.half_kappa;
    let d = s.delta;
    let chi = s.kerr();
    if chi == 0.0 {
        return Ok(vec![f2 / (k2 + d * d)]);
    }
    let f = |n: f64| n * (k2 + (d + chi * n).powi(2)) - f2;
    let df = |n: f64| 3.0 * chi * chi * n * n + 4.0 * d * chi * n + d * d + k2;

    // n (kappa/2)^2 <= kappa_e S^2 bounds every root.
    let n_max = f2 / k2;
    let mut edges = vec![0.0];
    let disc = d * d - 3.0 * k2;
    if disc > 0.0 {
        let r = disc.sqrt();
        for c in [(-2.0 * d - r) / (3.0 * chi), (-2.0 * d + r) / (3.0 * chi)] {
            if c > 0.0 && c < n_max {
                edges.push(c);
            }
        }
    }
    edges.push(n_max);

    let scale = f2.max(1e-300);
    let mut roots: Vec<f64> = Vec::new();
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let (flo, fhi) = (f(lo), f(hi));
        // A critical point touching zero is a degenerate (double) root.
        if flo.abs() <= 1e-13 * scale {
            push_unique(&mut roots, lo);
            continue;
        }
        if fhi.abs() <= 1e-13 * scale {
            push_unique(&mut roots, hi);
            continue;
        }
        if flo.signum() == fhi.signum() {
            continue;
        }
        let root = bisect_polish(&f, &df, lo, hi)?;
        push_unique(&mut roots, root);
    }
    roots.sort_by(|a, b| a.total_cmp(b));
    Ok(roots)
}

fn push_unique(roots: &mut Vec<f64>, n: f64) {
    if !roots.iter().any(|r| (r - n).abs() <= 1e-12 * n.abs().max(1e-300)) {
        roots.push(n);
    }
}

fn bisect_polish(
    f: &impl Fn(f64) -> f64,
    df: &impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
) -> Result<f64, ModelError> {
    let (lo0, hi0) = (lo, hi);
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-10 * hi {
            break;
        }
    }
    // Newton polish, kept inside the bracket.
    let mut n = 0.5 * (lo + hi);
    for _ in 0..8 {
        let d = df(n);
        if d == 0.0 {
            break;
        }
        let next = n - f(n) / d;
        if !(next >= lo0 && next <= hi0) || !next.is_finite() {
            break;
        }
        if (next - n).abs() <= 1e-16 * n.abs() {
            n = next;
            break;
        }
        n = next;
    }
    if !(n >= lo0 && n <= hi0) || !n.is_finite() {
        return Err(ModelError::RootPolish { lo: lo0, hi: hi0, f_lo: f(lo0), f_hi: f(hi0) });
    }
    Ok(n)
}

/// A named parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterPreset {
    pub name: String,
    pub params: SystemParams,
    pub notes: String,
}

pub const PRESET_NAMES: [&str; 2] = ["paper-device", "desk-scale"];

/// Device values of the SiN-membrane electromechanical sample.
pub fn paper_device() -> ParameterPreset {
    let kappa = TAU * 380e3;
    ParameterPreset {
        name: "paper-device".into(),
        params: SystemParams {
            omega_c: TAU * 5.31e9,
            kappa,
            kappa_e: 0.5 * kappa,
            modes: [
                MechMode { omega_m: TAU * 756e3, gamma: TAU * 2.32, g: TAU * 0.49 },
                MechMode { omega_m: TAU * 1.750e6, gamma: TAU * 0.30, g: TAU * 0.07 },
            ],
        },
        notes: "Measured device constants. kappa_e is not reported and defaults to kappa/2.".into(),
    }
}

/// Faster-settling variant of [`paper_device`].
///
/// Mechanical damping is raised to `gamma_1/2pi = 756 Hz` (1e-3 of the
/// mode frequency) and `gamma_2/2pi = 1750 Hz * 0.30/2.32`. Each `g_j` is
/// scaled by the square root of its damping factor so the gain-to-loss
/// ratio `g_j^2/gamma_j`, and with it every weak-coupling threshold power,
/// is unchanged. Frequencies, `kappa` and `kappa_e` are untouched.
pub fn desk_scale() -> ParameterPreset {
    let base = paper_device().params;
    let gammas = [TAU * 756.0, TAU * 1750.0 * 0.30 / 2.32];
    let mut params = base;
    for (m, gamma) in params.modes.iter_mut().zip(gammas) {
        let factor = gamma / m.gamma;
        m.g *= factor.sqrt();
        m.gamma = gamma;
    }
    ParameterPreset {
        name: "desk-scale".into(),
        params,
        notes: "paper-device with gamma_j raised (gamma_1/2pi = 756 Hz, \
                gamma_2/2pi = 1750 Hz x 0.30/2.32) and g_j scaled so g_j^2/gamma_j \
                is preserved; omega_m2/omega_m1 and kappa/omega_m1 unchanged."
            .into(),
    }
}

pub fn preset(name: &str) -> Option<ParameterPreset> {
    match name {
        "paper-device" => Some(paper_device()),
        "desk-scale" => Some(desk_scale()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn empty_cavity_is_driven_by_input_only() {
        let p = paper_device().params;
        let pump = PumpCondition::from_flux(&p, p.modes[0].omega_m, 3.0e6);
        let d = eom_rhs(&SystemState::ZERO, &p, &pump).unwrap();
        assert_eq!(d.a, c(p.kappa_e.sqrt() * 3.0e6, 0.0));
        assert_eq!(d.b, [c(0.0, 0.0); 2]);
    }

    #[test]
    fn decoupled_cavity_is_a_decaying_rotation() {
        let p = paper_device().params.decoupled();
        let pump = PumpCondition::from_flux(&p, 1.2e6, 0.0);
        let a0 = c(0.3, -0.7);
        let d = eom_rhs(&SystemState::new(a0, c(1.0, 2.0), c(-3.0, 0.5)), &p, &pump).unwrap();
        assert_eq!(d.a, c(-0.5 * p.kappa, 1.2e6) * a0);
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let p = paper_device().params;
        let pump = PumpCondition::off(&p, 0.0);
        let s = SystemState::new(c(f64::NAN, 0.0), c(0.0, 0.0), c(0.0, 0.0));
        assert_eq!(eom_rhs(&s, &p, &pump), Err(ModelError::InvalidState("eom_rhs input")));
    }

    #[test]
    fn dbm_flux_pair() {
        assert_eq!(dbm_to_flux(f64::NEG_INFINITY, 1e10), 0.0);
        let w = TAU * 5.3118e9;
        for x in [-75.0, -29.0, 0.0] {
            let back = flux_to_dbm(dbm_to_flux(x, w), w);
            assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0), "{x} -> {back}");
        }
        // P = 10^-7.5 mW over hbar*omega_d
        let s2 = dbm_to_flux(-75.0, w).powi(2);
        assert!((s2 / 8.99e12 - 1.0).abs() < 2e-3, "{s2:e}");
        let mut prev = 0.0;
        for k in 0..200 {
            let s = dbm_to_flux(-150.0 + k as f64, w);
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn pump_invariants() {
        let p = desk_scale().params;
        let pump = PumpCondition::new(&p, 0.37 * p.modes[0].omega_m, -41.3);
        assert_eq!(pump.delta_dc, pump.omega_d - p.omega_c);
        let watts = 10f64.powf(-4.13) * 1e-3;
        assert!((pump.watts() / watts - 1.0).abs() < 1e-12);
    }

    #[test]
    fn presets_are_valid() {
        for name in PRESET_NAMES {
            let pr = preset(name).unwrap();
            pr.params.validate().unwrap();
            assert!(pr.params.resolved_sideband());
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn paper_device_values() {
        let p = paper_device().params;
        let hz = |w: f64| w / TAU;
        assert!((hz(p.modes[0].omega_m) - 756e3).abs() < 1e-6);
        assert!((hz(p.modes[0].gamma) - 2.32).abs() < 1e-12);
        assert!((hz(p.modes[1].omega_m) - 1.750e6).abs() < 1e-6);
        assert!((hz(p.modes[1].gamma) - 0.30).abs() < 1e-12);
        assert!((hz(p.omega_c) - 5.31e9).abs() < 1e-3);
        assert!((hz(p.kappa) - 380e3).abs() < 1e-6);
        assert!((hz(p.modes[0].g) - 0.49).abs() < 1e-12);
        assert!((hz(p.modes[1].g) - 0.07).abs() < 1e-12);
    }

    #[test]
    fn desk_scale_preserves_ratios() {
        let a = paper_device().params;
        let b = desk_scale().params;
        let r = |p: &SystemParams| p.modes[1].omega_m / p.modes[0].omega_m;
        assert_eq!(r(&a), r(&b));
        assert_eq!(a.kappa / a.modes[0].omega_m, b.kappa / b.modes[0].omega_m);
        for j in 0..2 {
            let gl = |p: &SystemParams| p.modes[j].g.powi(2) / p.modes[j].gamma;
            assert!((gl(&a) / gl(&b) - 1.0).abs() < 1e-12);
            // Ring-down within 1e4 mechanical periods.
            let periods = b.modes[j].omega_m / b.modes[j].gamma / TAU;
            assert!(periods <= 1e4, "{periods}");
        }
    }

    #[test]
    fn validation_rejects_bad_params() {
        let mut p = paper_device().params;
        p.kappa_e = 2.0 * p.kappa;
        assert!(p.validate().is_err());
        let mut p = paper_device().params;
        p.modes.swap(0, 1);
        assert!(p.validate().is_err());
        let mut p = paper_device().params;
        p.modes[1].gamma = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn linear_cavity_fixed_point_is_lorentzian() {
        let p = paper_device().params.decoupled();
        let pump = PumpCondition::new(&p, 0.8 * p.modes[0].omega_m, -60.0);
        let fps = static_fixed_points(&p, &pump).unwrap();
        assert_eq!(fps.len(), 1);
        let expect = p.kappa_e * pump.s_in.powi(2) / (pump.delta_dc.powi(2) + 0.25 * p.kappa.powi(2));
        assert!((fps[0].photons() / expect - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_drive_fixed_point_is_origin() {
        let p = paper_device().params;
        let fps = static_fixed_points(&p, &PumpCondition::off(&p, 1e6)).unwrap();
        assert_eq!(fps, vec![SystemState::ZERO]);
    }

    #[test]
    fn red_side_bistability_gives_three_roots() {
        // Strong Kerr shift on the red side folds the response.
        let p = desk_scale().params;
        let probe = PumpCondition::off(&p, -3.0 * p.kappa);
        let s = Scaled::new(&p, &probe);
        let (k2, d, chi) = (s.half_kappa.powi(2), s.delta, s.kerr());
        let r = (d * d - 3.0 * k2).sqrt();
        let lhs = |n: f64| n * (k2 + (d + chi * n).powi(2));
        let (n_lo, n_hi) = ((-2.0 * d - r) / (3.0 * chi), (-2.0 * d + r) / (3.0 * chi));
        // Drive halfway between the local maximum and minimum of the response.
        let f2 = 0.5 * (lhs(n_lo) + lhs(n_hi));
        let s_in = f2.sqrt() * s.unit / p.kappa_e.sqrt();
        let pump = PumpCondition::from_flux(&p, probe.delta_dc, s_in);
        let fps = static_fixed_points(&p, &pump).unwrap();
        assert_eq!(fps.len(), 3, "{fps:?}");
        assert!(fps.windows(2).all(|w| w[0].photons() < w[1].photons()));
        for fp in &fps {
            let d = eom_rhs(fp, &p, &pump).unwrap();
            let unit = p.modes[0].omega_m;
            assert!(d.a.norm() / unit < 1e-9 * fp.a.norm().max(1.0));
        }
    }

    #[test]
    fn static_displacement_balances_mechanics() {
        for pr in [paper_device(), desk_scale()] {
            let p = pr.params;
            for (dd, dbm) in [(1.0, -75.0), (0.5, -40.0), (2.3, -30.0), (-1.0, -20.0)] {
                let pump = PumpCondition::new(&p, dd * p.modes[0].omega_m, dbm);
                let unit = p.modes[0].omega_m;
                for fp in static_fixed_points(&p, &pump).unwrap() {
                    let d = eom_rhs(&fp, &p, &pump).unwrap();
                    for j in 0..2 {
                        assert!(d.b[j].norm() / unit < 1e-12 * fp.b[j].norm(), "{:?}", d.b[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn kerr_scaling_preserves_frequency_shift() {
        let p = desk_scale().params;
        let unit = p.modes[0].omega_m;
        for cval in [0.5, 2.0, 7.0] {
            let mut q = p;
            q.modes[0].g *= cval;
            q.modes[1].g *= cval;
            for dd in [0.5, 1.0, -0.8] {
                let pump = PumpCondition::new(&p, dd * unit, -35.0);
                let pump_q = PumpCondition::from_flux(&q, dd * unit, pump.s_in / cval);
                let n_p = static_fixed_points(&p, &pump).unwrap();
                let n_q = static_fixed_points(&q, &pump_q).unwrap();
                assert_eq!(n_p.len(), n_q.len());
                for (x, y) in n_p.iter().zip(&n_q) {
                    let (sx, sy) = (p.kerr() * x.photons(), q.kerr() * y.photons());
                    assert!((sx / sy - 1.0).abs() < 1e-10, "{sx} vs {sy}");
                }
            }
        }
    }
}
