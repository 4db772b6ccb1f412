//! Long-horizon integration of the equations of motion and classification
//! of the asymptotic attractor.

use crate::integrator::{Dense, StepError, Stepper, Vec6};
use crate::model::{static_fixed_points, ModelError, PumpCondition, Scaled, SystemParams, SystemState};
use crate::signal::real_spectrum_peaks;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("step size underflow at t = {t:e} s")]
    IntegrationFailure { t: f64, last_state: SystemState },
    #[error("trajectory diverged at t = {t:e} s")]
    Divergence { t: f64, last_state: SystemState },
    #[error("growth-rate fit is ill-conditioned: {0}")]
    IllConditionedFit(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("trajectory i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Uniformly sampled segment of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformWindow {
    /// Time of the first sample (s).
    pub t0: f64,
    /// Hz
    pub sample_rate: f64,
    pub states: Vec<SystemState>,
}

impl UniformWindow {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.states.len() as f64 / self.sample_rate
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 / self.sample_rate
    }
}

/// Where and how densely to resample the end of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailSpec {
    /// s
    pub duration: f64,
    /// Hz
    pub sample_rate: f64,
}

impl TailSpec {
    /// 16 samples per mode-2 period over 200 mode-1 periods.
    pub fn minimal(params: &SystemParams) -> Self {
        let f1 = params.modes[0].omega_m / TAU;
        let f2 = params.modes[1].omega_m / TAU;
        Self { duration: 200.0 / f1, sample_rate: 16.0 * f2 }
    }

    pub fn samples(&self) -> usize {
        (self.duration * self.sample_rate).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    /// Relative local error target per step.
    pub tol: f64,
    pub tail: Option<TailSpec>,
    /// Spacing of the coarse records (s); `None` records every accepted step.
    pub record_interval: Option<f64>,
}

/// Sampled solution of the equations of motion.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: SystemParams,
    pub pump: PumpCondition,
    /// Strictly increasing sample times (s).
    pub t: Vec<f64>,
    pub states: Vec<SystemState>,
    /// Uniformly resampled end segment for spectral use.
    pub dense_last_window: Option<UniformWindow>,
    /// Fixed point the run was seeded from, when known.
    pub reference: Option<SystemState>,
    pub steps: u64,
    pub rejected: u64,
}

impl Trajectory {
    pub fn final_state(&self) -> SystemState {
        *self.states.last().expect("trajectory has at least the initial sample")
    }
}

/// Largest permitted step: 1/32 of a mode-2 period, in units of `1/omega_m1`.
fn step_cap(s: &Scaled) -> f64 {
    TAU / (32.0 * s.omega[1])
}

fn check_tol(tol: f64) -> Result<(), DynamicsError> {
    if !(1e-12..=1e-3).contains(&tol) {
        return Err(DynamicsError::InvalidArgument(format!("tol {tol:e} outside [1e-12, 1e-3]")));
    }
    Ok(())
}

/// Integrator state that can be advanced in pieces.
struct Run {
    stepper: Stepper,
    unit: f64,
}

impl Run {
    fn new(params: &SystemParams, pump: &PumpCondition, initial: &SystemState, tol: f64) -> Result<Self, DynamicsError> {
        check_tol(tol)?;
        if !initial.is_finite() {
            return Err(ModelError::InvalidState("initial state").into());
        }
        let s = Scaled::new(params, pump);
        let cap = step_cap(&s);
        Ok(Self { stepper: Stepper::new(s, 0.0, initial.to_array(), tol, cap), unit: s.unit })
    }

    fn time(&self) -> f64 {
        self.stepper.t / self.unit
    }

    fn state(&self) -> SystemState {
        SystemState::from_array(&self.stepper.y)
    }

    /// Advances to `t_end` (s), handing every accepted step's interpolant to `sink`.
    fn advance(&mut self, t_end: f64, mut sink: impl FnMut(&Dense, f64)) -> Result<(), DynamicsError> {
        let tau_end = t_end * self.unit;
        while self.stepper.t < tau_end {
            match self.stepper.step(tau_end) {
                Ok(dense) => sink(&dense, self.stepper.t),
                Err(e) => {
                    let t = self.time();
                    let last_state = self.state();
                    return Err(match e {
                        StepError::Underflow => DynamicsError::IntegrationFailure { t, last_state },
                        StepError::NonFinite => DynamicsError::Divergence { t, last_state },
                    });
                }
            }
        }
        Ok(())
    }
}

/// Collects coarse records and uniform samples from dense output.
struct Recorder {
    unit: f64,
    interval: Option<f64>,
    next_record: f64,
    t: Vec<f64>,
    states: Vec<SystemState>,
    tail_t0: f64,
    tail_rate: f64,
    tail_n: usize,
    tail: Vec<SystemState>,
}

impl Recorder {
    fn new(unit: f64, t_start: f64, initial: SystemState, interval: Option<f64>) -> Self {
        Self {
            unit,
            interval,
            next_record: t_start + interval.unwrap_or(0.0),
            t: vec![t_start],
            states: vec![initial],
            tail_t0: f64::INFINITY,
            tail_rate: 1.0,
            tail_n: 0,
            tail: Vec::new(),
        }
    }

    fn set_tail(&mut self, t0: f64, rate: f64, n: usize) {
        self.tail_t0 = t0;
        self.tail_rate = rate;
        self.tail_n = n;
        self.tail = Vec::with_capacity(n);
    }

    fn take(&mut self, dense: &Dense, tau_after: f64, y_after: &Vec6) {
        let t_after = tau_after / self.unit;
        // Tail samples inside this step (inclusive of the end point).
        while self.tail.len() < self.tail_n {
            let ts = self.tail_t0 + self.tail.len() as f64 / self.tail_rate;
            let tau = ts * self.unit;
            if tau > tau_after {
                break;
            }
            self.tail.push(SystemState::from_array(&dense.eval(tau)));
        }
        match self.interval {
            None => {
                self.t.push(t_after);
                self.states.push(SystemState::from_array(y_after));
            }
            Some(dt) => {
                while self.next_record <= t_after {
                    let tau = self.next_record * self.unit;
                    self.t.push(self.next_record);
                    self.states.push(SystemState::from_array(&dense.eval(tau)));
                    self.next_record += dt;
                }
            }
        }
    }

    fn finish(&mut self, t_end: f64, y_end: SystemState) {
        if self.t.last().is_some_and(|&t| t < t_end) {
            self.t.push(t_end);
            self.states.push(y_end);
        }
    }
}

/// Integrates from `t = 0` to `horizon` (s) with the embedded 8(5,3)
/// Runge–Kutta scheme and a dense tail covering the last 200 mode-1 periods
/// at 16 samples per mode-2 period.
pub fn integrate(
    params: &SystemParams,
    pump: &PumpCondition,
    initial: &SystemState,
    horizon: f64,
    tol: f64,
) -> Result<Trajectory, DynamicsError> {
    let opts = IntegrateOptions {
        tol,
        tail: Some(TailSpec::minimal(params)),
        record_interval: Some(horizon / 20_000.0),
    };
    integrate_with(params, pump, initial, horizon, &opts)
}

pub fn integrate_with(
    params: &SystemParams,
    pump: &PumpCondition,
    initial: &SystemState,
    horizon: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory, DynamicsError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(DynamicsError::InvalidArgument(format!("horizon {horizon} must be > 0")));
    }
    let mut run = Run::new(params, pump, initial, opts.tol)?;
    let mut rec = Recorder::new(run.unit, 0.0, *initial, opts.record_interval);
    if let Some(tail) = opts.tail {
        let n = tail.samples().min((horizon * tail.sample_rate).floor() as usize);
        let t0 = horizon - (n.saturating_sub(1)) as f64 / tail.sample_rate;
        rec.set_tail(t0, tail.sample_rate, n);
        // A tail starting at t = 0 begins with the initial state.
        if t0 <= 0.0 && n > 0 {
            rec.tail.push(*initial);
            rec.tail_t0 = 0.0;
        }
    }
    let rec_ref = &mut rec;
    run.advance(horizon, |dense, tau_after| {
        let y = dense.end();
        rec_ref.take(dense, tau_after, &y);
    })?;
    rec.finish(horizon, run.state());
    let tail = opts.tail.map(|_| UniformWindow {
        t0: rec.tail_t0,
        sample_rate: rec.tail_rate,
        states: std::mem::take(&mut rec.tail),
    });
    Ok(Trajectory {
        params: *params,
        pump: *pump,
        t: rec.t,
        states: rec.states,
        dense_last_window: tail,
        reference: None,
        steps: run.stepper.steps,
        rejected: run.stepper.rejected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttractorKind {
    FixedPoint,
    LimitCycle,
    Torus,
    Undecided,
}

impl AttractorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttractorKind::FixedPoint => "FixedPoint",
            AttractorKind::LimitCycle => "LimitCycle",
            AttractorKind::Torus => "Torus",
            AttractorKind::Undecided => "Undecided",
        }
    }
}

impl std::fmt::Display for AttractorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AttractorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "FixedPoint" => AttractorKind::FixedPoint,
            "LimitCycle" => AttractorKind::LimitCycle,
            "Torus" => AttractorKind::Torus,
            "Undecided" => AttractorKind::Undecided,
            _ => return Err(format!("unknown attractor kind {s:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AmplitudeStats {
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractorReport {
    pub kind: AttractorKind,
    /// Start of the window in which the attractor was confirmed (s).
    pub settle_time: f64,
    /// `|a|`, `|b1|`, `|b2|` over the tail.
    pub amplitude_stats: [AmplitudeStats; 3],
    /// RMS oscillation amplitude of each mechanical mode about its mean (phonon amplitude units).
    pub mech_oscillation: [f64; 2],
    /// Measured oscillation frequency of each mechanical mode (Hz), when it oscillates.
    pub mech_frequency_hz: [Option<f64>; 2],
    /// Fastest log-envelope slope of the mechanical modes over the transient (1/s).
    pub growth_rate_estimate: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct SettleCriteria {
    /// FixedPoint when `var(|a|) <= var_tol * mean(|a|)^2` and no mode grows.
    pub var_tol: f64,
    pub max_horizon: f64,
    /// Analysis window and dense tail.
    pub tail: TailSpec,
    pub tol: f64,
    /// Relative change between window halves tolerated as stationary.
    pub stationarity: f64,
    /// Modulation index below which a decaying mechanical mode is ignored.
    pub negligible_modulation: f64,
    /// Wall-clock cap; reaching it reports Undecided.
    pub wall_cap: Option<Duration>,
}

impl SettleCriteria {
    pub fn new(params: &SystemParams, max_horizon: f64) -> Self {
        Self {
            var_tol: 1e-6,
            max_horizon,
            tail: TailSpec::minimal(params),
            tol: 1e-9,
            stationarity: 1e-3,
            negligible_modulation: 1e-6,
            wall_cap: None,
        }
    }

    /// `factor / gamma_min`, the default per-point budget scale.
    pub fn default_horizon(params: &SystemParams, factor: f64) -> f64 {
        let gmin = params.modes[0].gamma.min(params.modes[1].gamma);
        factor / gmin
    }
}

/// Lowest-photon-number fixed point and the seeded initial state:
/// both mechanical amplitudes get a `1e-3` relative kick with fixed phases.
pub fn seeded_start(params: &SystemParams, pump: &PumpCondition) -> Result<(SystemState, SystemState), DynamicsError> {
    let fps = static_fixed_points(params, pump)?;
    let fp = fps[0];
    let mut start = fp;
    for (j, phase) in [0.3_f64, 1.1].into_iter().enumerate() {
        start.b[j] += 1e-3 * fp.b[j].norm() * Complex64::from_polar(1.0, phase);
    }
    Ok((fp, start))
}

/// Integrates from the seeded fixed point until the attractor is identified.
pub fn settle(
    params: &SystemParams,
    pump: &PumpCondition,
    criteria: &SettleCriteria,
) -> Result<(Trajectory, AttractorReport), DynamicsError> {
    let (fp, start) = seeded_start(params, pump)?;
    let (mut traj, report) = settle_from(params, pump, &start, criteria)?;
    traj.reference = Some(fp);
    Ok((traj, report))
}

/// Window-wise integration from an arbitrary initial state.
pub fn settle_from(
    params: &SystemParams,
    pump: &PumpCondition,
    initial: &SystemState,
    criteria: &SettleCriteria,
) -> Result<(Trajectory, AttractorReport), DynamicsError> {
    if !(criteria.var_tol > 0.0 && criteria.max_horizon > 0.0 && criteria.tail.duration > 0.0) {
        return Err(DynamicsError::InvalidArgument("settle criteria must be positive".into()));
    }
    let started = Instant::now();
    let mut run = Run::new(params, pump, initial, criteria.tol)?;
    let window = criteria.tail.duration;
    let n_tail = criteria.tail.samples().max(16);
    let rate = criteria.tail.sample_rate;
    let record_dt = (criteria.max_horizon / 40_000.0).max(0.5 / run.unit);
    let mut rec = Recorder::new(run.unit, 0.0, *initial, Some(record_dt));

    loop {
        let t_start = run.time();
        let t_end = t_start + n_tail as f64 / rate;
        rec.set_tail(t_start + 1.0 / rate, rate, n_tail);
        let rec_ref = &mut rec;
        run.advance(t_end, |dense, tau_after| {
            let y = dense.end();
            rec_ref.take(dense, tau_after, &y);
        })?;
        let tail = UniformWindow {
            t0: rec.tail_t0,
            sample_rate: rate,
            states: std::mem::take(&mut rec.tail),
        };
        let verdict = judge_window(params, &tail, criteria);
        let out_of_time = run.time() + window > criteria.max_horizon
            || criteria.wall_cap.is_some_and(|cap| started.elapsed() >= cap);
        let kind = match verdict {
            Some(k) => k,
            None if out_of_time => AttractorKind::Undecided,
            None => continue,
        };
        rec.finish(run.time(), run.state());
        let report = build_report(params, kind, t_start, &tail, &rec);
        let traj = Trajectory {
            params: *params,
            pump: *pump,
            t: std::mem::take(&mut rec.t),
            states: std::mem::take(&mut rec.states),
            dense_last_window: Some(tail),
            reference: None,
            steps: run.stepper.steps,
            rejected: run.stepper.rejected,
        };
        return Ok((traj, report));
    }
}

struct HalfStats {
    mean_abs_a: f64,
    osc: [f64; 2],
}

fn half_stats(states: &[SystemState]) -> HalfStats {
    let n = states.len().max(1) as f64;
    let mean_abs_a = states.iter().map(|s| s.a.norm()).sum::<f64>() / n;
    let mut osc = [0.0; 2];
    for (j, o) in osc.iter_mut().enumerate() {
        let mean: Complex64 = states.iter().map(|s| s.b[j]).sum::<Complex64>() / n;
        *o = (states.iter().map(|s| (s.b[j] - mean).norm_sqr()).sum::<f64>() / n).sqrt();
    }
    HalfStats { mean_abs_a, osc }
}

fn modulation_index(params: &SystemParams, j: usize, amplitude: f64) -> f64 {
    2.0 * params.modes[j].g * amplitude / params.modes[j].omega_m
}

/// Attractor decision for one analysis window, or `None` while still transient.
fn judge_window(params: &SystemParams, tail: &UniformWindow, c: &SettleCriteria) -> Option<AttractorKind> {
    let states = &tail.states;
    let mid = states.len() / 2;
    let (h1, h2) = (half_stats(&states[..mid]), half_stats(&states[mid..]));
    let trend = |j: usize| {
        if h1.osc[j] == 0.0 {
            if h2.osc[j] == 0.0 { 1.0 } else { f64::INFINITY }
        } else {
            h2.osc[j] / h1.osc[j]
        }
    };
    let growing = (0..2).any(|j| trend(j) > 1.0 + c.stationarity);

    let abs_a: Vec<f64> = states.iter().map(|s| s.a.norm()).collect();
    let n = abs_a.len() as f64;
    let mean = abs_a.iter().sum::<f64>() / n;
    let var = abs_a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var <= c.var_tol * mean * mean && !growing {
        return Some(AttractorKind::FixedPoint);
    }
    if growing {
        return None;
    }
    let a_drift = if h1.mean_abs_a > 0.0 { (h2.mean_abs_a / h1.mean_abs_a - 1.0).abs() } else { 0.0 };
    if a_drift > c.stationarity {
        return None;
    }
    for j in 0..2 {
        let steady = (trend(j) - 1.0).abs() <= c.stationarity;
        let negligible = modulation_index(params, j, h2.osc[j]) < c.negligible_modulation;
        if !(steady || negligible) {
            return None;
        }
    }
    Some(envelope_kind(&abs_a, tail.sample_rate))
}

/// LimitCycle if every strong envelope line is a harmonic of one
/// fundamental, Torus if two generators are needed, Undecided otherwise.
/// Lines weaker than 5% of the strongest are ignored.
pub fn envelope_kind(abs_a: &[f64], sample_rate: f64) -> AttractorKind {
    let peaks = real_spectrum_peaks(abs_a, sample_rate, 0.05);
    if peaks.is_empty() {
        return AttractorKind::LimitCycle;
    }
    let df = sample_rate / abs_a.len() as f64;
    let tol = 2.0 * df;
    let f0 = peaks[0].0;
    let harmonic = |f: f64, base: f64| {
        let m = (f / base).round();
        m >= 1.0 && (f - m * base).abs() <= tol * m.max(1.0).sqrt()
    };
    let others: Vec<f64> = peaks.iter().map(|p| p.0).filter(|&f| !harmonic(f, f0)).collect();
    if others.is_empty() {
        return AttractorKind::LimitCycle;
    }
    let f1 = others[0];
    let on_lattice = |f: f64| {
        (-10i32..=10).any(|m| {
            (-10i32..=10).any(|k| (f - (m as f64 * f0 + k as f64 * f1).abs()).abs() <= tol * 2.0)
        })
    };
    if others.iter().all(|&f| on_lattice(f)) {
        AttractorKind::Torus
    } else {
        AttractorKind::Undecided
    }
}

fn build_report(
    params: &SystemParams,
    kind: AttractorKind,
    settle_time: f64,
    tail: &UniformWindow,
    rec: &Recorder,
) -> AttractorReport {
    let mut stats = [AmplitudeStats::default(); 3];
    let n = tail.len().max(1) as f64;
    for (k, st) in stats.iter_mut().enumerate() {
        let vals = tail.states.iter().map(|s| if k == 0 { s.a.norm() } else { s.b[k - 1].norm() });
        let (sum, max) = vals.fold((0.0, 0.0f64), |(s, m), v| (s + v, m.max(v)));
        *st = AmplitudeStats { mean: sum / n, max };
    }
    let whole = half_stats(&tail.states);
    let mut freq = [None, None];
    for j in 0..2 {
        if modulation_index(params, j, whole.osc[j]) >= 1e-6 {
            freq[j] = rotation_frequency(tail, j);
        }
    }
    let growth = transient_growth(params, &rec.t, &rec.states);
    AttractorReport {
        kind,
        settle_time,
        amplitude_stats: stats,
        mech_oscillation: whole.osc,
        mech_frequency_hz: freq,
        growth_rate_estimate: growth,
    }
}

/// Mean rotation rate of `b_j - <b_j>` over the window, in Hz (positive
/// for the natural `exp(-i omega t)` sense).
fn rotation_frequency(tail: &UniformWindow, j: usize) -> Option<f64> {
    let n = tail.len();
    if n < 4 {
        return None;
    }
    let mean: Complex64 = tail.states.iter().map(|s| s.b[j]).sum::<Complex64>() / n as f64;
    let mut total = 0.0;
    let mut prev = tail.states[0].b[j] - mean;
    for s in &tail.states[1..] {
        let cur = s.b[j] - mean;
        total += (cur * prev.conj()).arg();
        prev = cur;
    }
    let f = -total / (TAU * (n - 1) as f64 / tail.sample_rate);
    (f.is_finite() && f > 0.0).then_some(f)
}

fn transient_growth(params: &SystemParams, t: &[f64], states: &[SystemState]) -> Option<f64> {
    let reference = states.first()?;
    let mut best: Option<f64> = None;
    for j in 0..2 {
        if let Ok(r) = fit_log_envelope(params, t, states, reference.b[j], j) {
            best = Some(best.map_or(r, |b: f64| b.max(r)));
        }
    }
    best
}

/// Least-squares slope of `ln |b_j - b_ref|` over the early transient.
///
/// The fit starts after the cavity transient (20/kappa or four mechanical
/// periods, whichever is longer) and stops when the deviation reaches 2% of
/// the unit-modulation amplitude, where the linear regime ends.
fn fit_log_envelope(
    params: &SystemParams,
    t: &[f64],
    states: &[SystemState],
    b_ref: Complex64,
    j: usize,
) -> Result<f64, DynamicsError> {
    let t0 = *t.first().ok_or_else(|| DynamicsError::IllConditionedFit("empty trajectory".into()))?;
    let skip = (20.0 / params.kappa).max(4.0 * TAU / params.modes[j].omega_m);
    let limit = 0.02 * params.unit_modulation_amplitude(j);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (ti, s) in t.iter().zip(states) {
        if *ti < t0 + skip {
            continue;
        }
        let d = (s.b[j] - b_ref).norm();
        if d > limit {
            break;
        }
        if d > 0.0 {
            xs.push(*ti);
            ys.push(d.ln());
        }
    }
    if xs.len() < 20 {
        return Err(DynamicsError::IllConditionedFit(format!(
            "only {} usable samples for mode {}",
            xs.len(),
            j + 1
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(DynamicsError::IllConditionedFit("zero time span".into()));
    }
    let slope = sxy / sxx;
    let rms = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if rms > 0.05 {
        return Err(DynamicsError::IllConditionedFit(format!(
            "log-envelope residual {rms:.3} exceeds 0.05"
        )));
    }
    Ok(slope)
}

/// Growth rate (1/s) of mechanical mode `mode` (0 or 1) from the early
/// transient of a trajectory seeded near its `reference` fixed point.
/// Positive means unstable.
pub fn growth_rate_from_transient(traj: &Trajectory, mode: usize) -> Result<f64, DynamicsError> {
    if mode > 1 {
        return Err(DynamicsError::InvalidArgument(format!("mechanical mode index {mode}")));
    }
    let reference = traj
        .reference
        .ok_or_else(|| DynamicsError::InvalidArgument("trajectory has no reference fixed point".into()))?;
    fit_log_envelope(&traj.params, &traj.t, &traj.states, reference.b[mode], mode)
}

/// Seeds mode `mode` with a small kick off the lowest fixed point and
/// integrates `horizon` seconds, recording densely for a transient fit.
pub fn growth_probe(
    params: &SystemParams,
    pump: &PumpCondition,
    mode: usize,
    horizon: f64,
    tol: f64,
) -> Result<Trajectory, DynamicsError> {
    let fp = static_fixed_points(params, pump)?[0];
    let kick = if params.modes[mode].g > 0.0 {
        1e-6 * params.unit_modulation_amplitude(mode)
    } else {
        1.0
    };
    let mut start = fp;
    start.b[mode] += Complex64::from_polar(kick, 0.7);
    let opts = IntegrateOptions {
        tol,
        tail: None,
        record_interval: Some(0.25 / params.modes[0].omega_m),
    };
    let mut traj = integrate_with(params, pump, &start, horizon, &opts)?;
    traj.reference = Some(fp);
    Ok(traj)
}

const CSV_HEADER: &str = "t,re_a,im_a,re_b1,im_b1,re_b2,im_b2";

fn write_row(w: &mut impl Write, t: f64, s: &SystemState) -> std::io::Result<()> {
    let y = s.to_array();
    writeln!(w, "{t:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}", y[0], y[1], y[2], y[3], y[4], y[5])
}

/// CSV with columns `t, Re a, Im a, Re b1, Im b1, Re b2, Im b2`.
pub fn write_csv(w: &mut impl Write, t: &[f64], states: &[SystemState]) -> Result<(), DynamicsError> {
    writeln!(w, "{CSV_HEADER}")?;
    for (ti, s) in t.iter().zip(states) {
        write_row(w, *ti, s)?;
    }
    Ok(())
}

pub fn write_window_csv(w: &mut impl Write, win: &UniformWindow) -> Result<(), DynamicsError> {
    writeln!(w, "{CSV_HEADER}")?;
    for (i, s) in win.states.iter().enumerate() {
        write_row(w, win.time(i), s)?;
    }
    Ok(())
}

/// Binary trajectory layout (little endian):
///
/// | bytes | field                                   |
/// |-------|-----------------------------------------|
/// | 8     | magic `b"CSIMTRJ\0"`                    |
/// | 4     | format version (u32, currently 1)       |
/// | 8     | sample count (u64)                      |
/// | 8     | sample rate in Hz (f64, 0 = irregular)  |
/// | 8     | time of first sample in s (f64)         |
///
/// followed by one record per sample: `t` (omitted when the rate is
/// nonzero) then the six state components, all f64.
pub const BINARY_MAGIC: &[u8; 8] = b"CSIMTRJ\0";
pub const BINARY_VERSION: u32 = 1;

pub fn write_binary(w: &mut impl Write, t: &[f64], states: &[SystemState], sample_rate: f64) -> Result<(), DynamicsError> {
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    w.write_all(&(states.len() as u64).to_le_bytes())?;
    w.write_all(&sample_rate.to_le_bytes())?;
    w.write_all(&t.first().copied().unwrap_or(0.0).to_le_bytes())?;
    for (ti, s) in t.iter().zip(states) {
        if sample_rate == 0.0 {
            w.write_all(&ti.to_le_bytes())?;
        }
        for v in s.to_array() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_window_binary(w: &mut impl Write, win: &UniformWindow) -> Result<(), DynamicsError> {
    let t: Vec<f64> = (0..win.len()).map(|i| win.time(i)).collect();
    write_binary(w, &t, &win.states, win.sample_rate)
}

/// Reads the binary layout back into `(times, states, sample_rate)`.
pub fn read_binary(r: &mut impl Read) -> Result<(Vec<f64>, Vec<SystemState>, f64), DynamicsError> {
    let mut b8 = [0u8; 8];
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b8)?;
    if &b8 != BINARY_MAGIC {
        return Err(DynamicsError::InvalidArgument("bad trajectory magic".into()));
    }
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != BINARY_VERSION {
        return Err(DynamicsError::InvalidArgument(format!("unsupported trajectory version {version}")));
    }
    let f = |r: &mut dyn Read| -> std::io::Result<[u8; 8]> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(b)
    };
    let n = u64::from_le_bytes(f(r)?) as usize;
    let rate = f64::from_le_bytes(f(r)?);
    let t0 = f64::from_le_bytes(f(r)?);
    let mut t = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    for i in 0..n {
        let ti = if rate == 0.0 { f64::from_le_bytes(f(r)?) } else { t0 + i as f64 / rate };
        let mut y = [0.0; 6];
        for v in y.iter_mut() {
            *v = f64::from_le_bytes(f(r)?);
        }
        t.push(ti);
        states.push(SystemState::from_array(&y));
    }
    Ok((t, states, rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{desk_scale, paper_device};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn exact_linear_decay() {
        let p = desk_scale().params.decoupled();
        let pump = PumpCondition::off(&p, 0.3 * p.modes[0].omega_m);
        let a0 = SystemState::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0));
        let horizon = 10.0 / p.kappa;
        let traj = integrate(&p, &pump, &a0, horizon, 1e-10).unwrap();
        let a_end = traj.final_state().a.norm();
        let expect = (-0.5 * p.kappa * horizon).exp();
        assert!((a_end / expect - 1.0).abs() < 1e-6, "{a_end} vs {expect}");
        assert!(traj.t.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rejects_bad_arguments() {
        let p = desk_scale().params;
        let pump = PumpCondition::off(&p, 0.0);
        let s = SystemState::ZERO;
        assert!(matches!(integrate(&p, &pump, &s, 0.0, 1e-8), Err(DynamicsError::InvalidArgument(_))));
        assert!(matches!(integrate(&p, &pump, &s, 1.0, 1e-2), Err(DynamicsError::InvalidArgument(_))));
        assert!(matches!(integrate(&p, &pump, &s, 1.0, 1e-13), Err(DynamicsError::InvalidArgument(_))));
    }

    #[test]
    fn tail_is_uniform_and_covers_required_span() {
        let p = desk_scale().params;
        let pump = PumpCondition::new(&p, p.modes[0].omega_m, -80.0);
        let horizon = 400.0 * TAU / p.modes[0].omega_m;
        let traj = integrate(&p, &pump, &SystemState::ZERO, horizon, 1e-8).unwrap();
        let tail = traj.dense_last_window.as_ref().unwrap();
        let f1 = p.modes[0].omega_m / TAU;
        let f2 = p.modes[1].omega_m / TAU;
        assert!(tail.sample_rate >= 16.0 * f2 * (1.0 - 1e-12));
        assert!(tail.duration() * f1 >= 200.0 - 1e-6, "{}", tail.duration() * f1);
        let last = tail.time(tail.len() - 1);
        assert!((last - horizon).abs() <= 1e-12 * horizon);
        // Last tail sample equals the final recorded state.
        let d = (tail.states[tail.len() - 1].a - traj.final_state().a).norm();
        assert!(d <= 1e-9 * traj.final_state().a.norm());
    }

    #[test]
    fn decoupled_drive_converges_to_lorentzian() {
        let p = desk_scale().params.decoupled();
        let pump = PumpCondition::new(&p, 0.7 * p.modes[0].omega_m, -60.0);
        let fp = static_fixed_points(&p, &pump).unwrap()[0];
        let traj = integrate(&p, &pump, &SystemState::ZERO, 80.0 / p.kappa, 1e-10).unwrap();
        let d = (traj.final_state().a - fp.a).norm() / fp.a.norm();
        assert!(d < 1e-8, "{d:e}");
    }

    #[test]
    fn bare_mechanical_decay_rate() {
        let p = desk_scale().params.decoupled();
        let pump = PumpCondition::new(&p, p.modes[0].omega_m, -60.0);
        for j in 0..2 {
            let horizon = 3.0 / p.modes[j].gamma;
            let traj = growth_probe(&p, &pump, j, horizon, 1e-9).unwrap();
            let rate = growth_rate_from_transient(&traj, j).unwrap();
            let expect = -0.5 * p.modes[j].gamma;
            assert!((rate / expect - 1.0).abs() < 0.02, "mode {j}: {rate} vs {expect}");
        }
    }

    #[test]
    fn zero_drive_settles_at_origin() {
        let p = desk_scale().params;
        let pump = PumpCondition::off(&p, p.modes[0].omega_m);
        let crit = SettleCriteria::new(&p, 0.1);
        let (traj, rep) = settle(&p, &pump, &crit).unwrap();
        assert_eq!(rep.kind, AttractorKind::FixedPoint);
        let bound = 10.0 * (2.0 / p.kappa).max(2.0 / p.modes[0].gamma);
        assert!(rep.settle_time <= bound);
        assert_eq!(traj.final_state(), SystemState::ZERO);
    }

    #[test]
    fn binary_round_trip() {
        let p = paper_device().params;
        let pump = PumpCondition::new(&p, p.modes[0].omega_m, -70.0);
        let traj = integrate(&p, &pump, &SystemState::ZERO, 2e-5, 1e-8).unwrap();
        let mut buf = Vec::new();
        write_binary(&mut buf, &traj.t, &traj.states, 0.0).unwrap();
        let (t, s, rate) = read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(rate, 0.0);
        assert_eq!(t, traj.t);
        assert_eq!(s, traj.states);
        let win = traj.dense_last_window.unwrap();
        let mut buf = Vec::new();
        write_window_binary(&mut buf, &win).unwrap();
        let (t, s, rate) = read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(rate, win.sample_rate);
        assert_eq!(s, win.states);
        assert!((t[5] - win.time(5)).abs() < 1e-18);
        assert!(read_binary(&mut &b"NOTATRAJ"[..]).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        let s = SystemState::new(c(1.0, 2.0), c(3.0, 4.0), c(5.0, 6.0));
        write_csv(&mut buf, &[0.5], &[s]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let vals: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals, vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn envelope_classes() {
        let fs = 1000.0;
        let n = 8192;
        let t = |i: usize| i as f64 / fs;
        let one: Vec<f64> = (0..n).map(|i| 2.0 + (TAU * 13.0 * t(i)).cos() + 0.3 * (TAU * 26.0 * t(i)).cos()).collect();
        assert_eq!(envelope_kind(&one, fs), AttractorKind::LimitCycle);
        let two: Vec<f64> = (0..n)
            .map(|i| 2.0 + (TAU * 13.0 * t(i)).cos() + 0.4 * (TAU * 13.0 * 3.14159 * t(i)).cos())
            .collect();
        assert_eq!(envelope_kind(&two, fs), AttractorKind::Torus);
    }
}
