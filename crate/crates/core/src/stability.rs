//! Linear stability of the static solutions and the instability threshold
//! as a function of pump detuning.

use crate::dynamics::{growth_probe, growth_rate_from_transient, DynamicsError};
use crate::model::{
    static_fixed_points, Mode, ModelError, PumpCondition, Scaled, SystemParams, SystemState,
};
use nalgebra::{Matrix6, Schur, Vector6};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("state is not a fixed point (scaled residual {residual:e})")]
    NotAFixedPoint { residual: f64 },
    #[error("eigenvalue solver did not converge")]
    EigenSolver,
    #[error("bracket [{lo_dbm}, {hi_dbm}] dBm does not straddle the threshold (growth {growth_lo:e}, {growth_hi:e} 1/s)")]
    Bracketing { lo_dbm: f64, hi_dbm: f64, growth_lo: f64, growth_hi: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("threshold i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Largest tolerated scaled residual for a state passed as a fixed point.
pub const FIXED_POINT_RESIDUAL: f64 = 1e-9;

fn scaled_jacobian(s: &Scaled, y: &[f64; 6]) -> Matrix6<f64> {
    let (x, p) = (y[0], y[1]);
    let det = s.delta - 2.0 * (s.g[0] * y[2] + s.g[1] * y[4]);
    let mut j = Matrix6::zeros();
    j[(0, 0)] = -s.half_kappa;
    j[(0, 1)] = -det;
    j[(1, 0)] = det;
    j[(1, 1)] = -s.half_kappa;
    for m in 0..2 {
        let (u, v) = (2 + 2 * m, 3 + 2 * m);
        j[(0, u)] = 2.0 * s.g[m] * p;
        j[(1, u)] = -2.0 * s.g[m] * x;
        j[(u, u)] = -s.half_gamma[m];
        j[(u, v)] = s.omega[m];
        j[(v, u)] = -s.omega[m];
        j[(v, v)] = -s.half_gamma[m];
        j[(v, 0)] = -2.0 * s.g[m] * x;
        j[(v, 1)] = -2.0 * s.g[m] * p;
    }
    j
}

/// Scaled right-hand side norm relative to the size of its terms.
fn fixed_point_residual(s: &Scaled, y: &[f64; 6]) -> f64 {
    let mut dy = [0.0; 6];
    s.rhs(y, &mut dy);
    let r = dy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let ymax = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rate = s.half_kappa + s.delta.abs() + s.omega[1] + 1.0;
    r / (s.drive.abs() + ymax * rate).max(1.0)
}

/// Analytic Jacobian (1/s) of the equations of motion at `fp`, in the basis
/// `(Re a, Im a, Re b1, Im b1, Re b2, Im b2)`.
pub fn jacobian(
    params: &SystemParams,
    pump: &PumpCondition,
    fp: &SystemState,
) -> Result<Matrix6<f64>, StabilityError> {
    let s = Scaled::new(params, pump);
    let y = fp.to_array();
    let residual = fixed_point_residual(&s, &y);
    if !(residual < FIXED_POINT_RESIDUAL) {
        return Err(StabilityError::NotAFixedPoint { residual });
    }
    Ok(scaled_jacobian(&s, &y) * s.unit)
}

/// Jacobian at an arbitrary state, without the fixed-point check.
pub fn jacobian_at(params: &SystemParams, pump: &PumpCondition, state: &SystemState) -> Matrix6<f64> {
    let s = Scaled::new(params, pump);
    scaled_jacobian(&s, &state.to_array()) * s.unit
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub fixed_point: SystemState,
    /// Sorted by decreasing real part, then increasing imaginary part (1/s).
    pub eigenvalues: [Complex64; 6],
    /// 1/s
    pub max_growth: f64,
    /// Oscillator carrying the largest weight in the leading eigenvector.
    pub dominant_mode: Mode,
}

fn eigenvalues_scaled(j: &Matrix6<f64>) -> Result<[Complex64; 6], StabilityError> {
    let schur = Schur::try_new(*j, 1e-15, 100_000).ok_or(StabilityError::EigenSolver)?;
    let ev = schur.complex_eigenvalues();
    let mut out: [Complex64; 6] = std::array::from_fn(|i| ev[i]);
    out.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
    Ok(out)
}

/// Eigenvector of `j` for eigenvalue `lambda` by shifted inverse iteration.
fn eigenvector(j: &Matrix6<f64>, lambda: Complex64) -> Vector6<Complex64> {
    let scale = 1.0 + lambda.norm();
    let jc: Matrix6<Complex64> = j.map(|v| Complex64::new(v, 0.0));
    let mut v = Vector6::from_element(Complex64::new(1.0, 0.0));
    for shift in [1e-10, 1e-8, 1e-6] {
        let a = jc - Matrix6::identity() * (lambda + Complex64::new(shift * scale, shift * scale));
        let lu = a.lu();
        let mut ok = true;
        for _ in 0..4 {
            match lu.solve(&v) {
                Some(w) if w.iter().all(|c| c.is_finite()) => {
                    let n = w.norm();
                    if n == 0.0 {
                        ok = false;
                        break;
                    }
                    v = w / Complex64::new(n, 0.0);
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return v;
        }
        v = Vector6::from_element(Complex64::new(1.0, 0.0));
    }
    v
}

fn dominant(v: &Vector6<Complex64>) -> Mode {
    let w: Vec<f64> = (0..3).map(|o| v[2 * o].norm_sqr() + v[2 * o + 1].norm_sqr()).collect();
    let best = (0..3).fold(0, |b, o| if w[o] > w[b] { o } else { b });
    match best {
        0 => Mode::Cavity,
        1 => Mode::Mode1,
        _ => Mode::Mode2,
    }
}

/// Linear stability at a given fixed point.
pub fn analyze_fixed_point(
    params: &SystemParams,
    pump: &PumpCondition,
    fp: &SystemState,
) -> Result<StabilityReport, StabilityError> {
    let s = Scaled::new(params, pump);
    let y = fp.to_array();
    let residual = fixed_point_residual(&s, &y);
    if !(residual < FIXED_POINT_RESIDUAL) {
        return Err(StabilityError::NotAFixedPoint { residual });
    }
    let j = scaled_jacobian(&s, &y);
    let ev = eigenvalues_scaled(&j)?;
    let vec = eigenvector(&j, ev[0]);
    Ok(StabilityReport {
        fixed_point: *fp,
        eigenvalues: ev.map(|e| e * s.unit),
        max_growth: ev[0].re * s.unit,
        dominant_mode: dominant(&vec),
    })
}

/// Stability of the lowest-photon-number static solution, the branch
/// reached by an upward power sweep.
pub fn max_growth_rate(params: &SystemParams, pump: &PumpCondition) -> Result<StabilityReport, StabilityError> {
    let fp = static_fixed_points(params, pump)?[0];
    analyze_fixed_point(params, pump, &fp)
}

/// Largest real part among eigenvalues whose eigenvector is dominated by
/// each mechanical mode (1/s); `-inf` when no eigenvalue is labelled with
/// that mode.
pub fn mode_growth_rates(params: &SystemParams, pump: &PumpCondition) -> Result<[f64; 2], StabilityError> {
    let fp = static_fixed_points(params, pump)?[0];
    let s = Scaled::new(params, pump);
    let y = fp.to_array();
    let j = scaled_jacobian(&s, &y);
    let ev = eigenvalues_scaled(&j)?;
    let mut out = [f64::NEG_INFINITY; 2];
    for e in ev.iter().filter(|e| e.im >= 0.0) {
        if let Some(m) = dominant(&eigenvector(&j, *e)).mech_index() {
            out[m] = out[m].max(e.re * s.unit);
        }
    }
    Ok(out)
}

/// Weak-coupling optomechanical damping of mode `j` (0 or 1), in 1/s.
/// Negative on the blue side, where it cancels the intrinsic damping at
/// threshold.
pub fn sideband_gain(params: &SystemParams, pump: &PumpCondition, j: usize) -> Result<f64, StabilityError> {
    let s = Scaled::new(params, pump);
    let fp = static_fixed_points(params, pump)?[0];
    let y = fp.to_array();
    let n = fp.photons();
    let det = s.delta - 2.0 * (s.g[0] * y[2] + s.g[1] * y[4]);
    let k2 = s.half_kappa * s.half_kappa;
    let w = s.omega[j];
    let bracket = 1.0 / (k2 + (det + w).powi(2)) - 1.0 / (k2 + (det - w).powi(2));
    Ok(s.g[j] * s.g[j] * n * 2.0 * s.half_kappa * bracket * s.unit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub dbm: f64,
    /// Mode of the eigenvector that crosses into instability.
    pub branch: Mode,
    pub iterations: u32,
}

pub const DEFAULT_BRACKET_DBM: (f64, f64) = (-140.0, 20.0);

fn bisect_power(
    params: &SystemParams,
    delta_dc: f64,
    bracket: (f64, f64),
    tol: f64,
    mut f: impl FnMut(&PumpCondition) -> Result<(f64, Mode), StabilityError>,
) -> Result<Threshold, StabilityError> {
    let (mut lo, mut hi) = bracket;
    let (g_lo, _) = f(&PumpCondition::new(params, delta_dc, lo))?;
    let (g_hi, mut branch) = f(&PumpCondition::new(params, delta_dc, hi))?;
    if !(g_lo < 0.0 && g_hi > 0.0) {
        return Err(StabilityError::Bracketing { lo_dbm: lo, hi_dbm: hi, growth_lo: g_lo, growth_hi: g_hi });
    }
    let mut iterations = 0;
    while hi - lo > 1e-9 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let (g, mode) = f(&PumpCondition::new(params, delta_dc, mid))?;
        if g.abs() < tol {
            return Ok(Threshold { dbm: mid, branch: mode, iterations });
        }
        if g > 0.0 {
            hi = mid;
            branch = mode;
        } else {
            lo = mid;
        }
    }
    Ok(Threshold { dbm: 0.5 * (lo + hi), branch, iterations })
}

/// Pump power at which the leading Jacobian eigenvalue crosses zero,
/// bisected until `|max_growth| < 1e-3 * gamma_1`.
pub fn threshold_power(params: &SystemParams, delta_dc: f64, bracket_dbm: (f64, f64)) -> Result<Threshold, StabilityError> {
    let tol = 1e-3 * params.modes[0].gamma;
    bisect_power(params, delta_dc, bracket_dbm, tol, |pump| {
        let r = max_growth_rate(params, pump)?;
        Ok((r.max_growth, r.dominant_mode))
    })
}

/// Power at which `gamma_j + sideband_gain` crosses zero.
pub fn sideband_threshold(params: &SystemParams, delta_dc: f64, j: usize, bracket_dbm: (f64, f64)) -> Result<f64, StabilityError> {
    let gamma = params.modes[j].gamma;
    let t = bisect_power(params, delta_dc, bracket_dbm, 1e-6 * gamma, |pump| {
        Ok((-(gamma + sideband_gain(params, pump, j)?), Mode::from_mech_index(j)))
    })?;
    Ok(t.dbm)
}

/// Threshold located from the sign of the transient growth of mode `j`
/// after a small kick, bisected to `resolution_db`.
pub fn transient_threshold(
    params: &SystemParams,
    delta_dc: f64,
    j: usize,
    bracket_dbm: (f64, f64),
    resolution_db: f64,
) -> Result<f64, StabilityError> {
    let horizon = 3.0 / params.modes[j].gamma;
    let rate = |dbm: f64| -> Result<f64, StabilityError> {
        let pump = PumpCondition::new(params, delta_dc, dbm);
        let traj = growth_probe(params, &pump, j, horizon, 1e-10)?;
        Ok(growth_rate_from_transient(&traj, j)?)
    };
    let (mut lo, mut hi) = bracket_dbm;
    let (r_lo, r_hi) = (rate(lo)?, rate(hi)?);
    if !(r_lo < 0.0 && r_hi > 0.0) {
        return Err(StabilityError::Bracketing { lo_dbm: lo, hi_dbm: hi, growth_lo: r_lo, growth_hi: r_hi });
    }
    while hi - lo > resolution_db {
        let mid = 0.5 * (lo + hi);
        if rate(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCurve {
    /// rad/s
    pub detunings: Vec<f64>,
    /// NaN where no threshold lies inside the bracket.
    pub threshold_dbm: Vec<f64>,
    pub branch: Vec<Option<Mode>>,
}

impl ThresholdCurve {
    /// CSV columns `delta_dc_hz, threshold_dbm, branch`.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "delta_dc_hz,threshold_dbm,branch")?;
        for i in 0..self.detunings.len() {
            let branch = self.branch[i].map_or("none", |m| m.as_str());
            writeln!(w, "{:.6},{:.6},{}", self.detunings[i] / TAU, self.threshold_dbm[i], branch)?;
        }
        Ok(())
    }

    /// Indices of interior local minima.
    pub fn local_minima(&self) -> Vec<usize> {
        let t = &self.threshold_dbm;
        (1..t.len().saturating_sub(1))
            .filter(|&i| t[i].is_finite() && t[i] <= t[i - 1] && t[i] <= t[i + 1])
            .collect()
    }
}

/// Lowest instability onset inside `bracket_dbm`: the power axis is
/// scanned upward in `step_db` increments and the first sign change is
/// bisected. At high power the static shift can push the cavity past the
/// sideband and restore stability, so the top of the bracket alone is not
/// a reliable upper bound.
pub fn first_threshold(params: &SystemParams, delta_dc: f64, bracket_dbm: (f64, f64), step_db: f64) -> Result<Option<Threshold>, StabilityError> {
    let (lo, hi) = bracket_dbm;
    let growth = |dbm: f64| max_growth_rate(params, &PumpCondition::new(params, delta_dc, dbm)).map(|r| r.max_growth);
    if growth(lo)? >= 0.0 {
        return Err(StabilityError::Bracketing { lo_dbm: lo, hi_dbm: hi, growth_lo: growth(lo)?, growth_hi: f64::NAN });
    }
    let steps = ((hi - lo) / step_db).ceil().max(1.0) as usize;
    let mut prev = lo;
    for i in 1..=steps {
        let p = (lo + i as f64 * step_db).min(hi);
        if growth(p)? > 0.0 {
            return threshold_power(params, delta_dc, (prev, p)).map(Some);
        }
        prev = p;
    }
    Ok(None)
}

/// Thresholds over a detuning grid, evaluated in parallel. Grid points
/// with no onset inside the bracket get NaN and no branch.
pub fn threshold_curve(params: &SystemParams, detunings: &[f64], bracket_dbm: (f64, f64)) -> Result<ThresholdCurve, StabilityError> {
    let results: Vec<Result<Option<Threshold>, StabilityError>> = detunings
        .par_iter()
        .map(|&d| first_threshold(params, d, bracket_dbm, 1.0))
        .collect();
    let mut curve = ThresholdCurve { detunings: detunings.to_vec(), threshold_dbm: Vec::new(), branch: Vec::new() };
    for r in results {
        let t = r?;
        curve.threshold_dbm.push(t.map_or(f64::NAN, |t| t.dbm));
        curve.branch.push(t.map(|t| t.branch));
    }
    Ok(curve)
}

/// Threshold of mode `j` alone (the other coupling switched off).
pub fn single_mode_curve(params: &SystemParams, j: usize, detunings: &[f64], bracket_dbm: (f64, f64)) -> Result<ThresholdCurve, StabilityError> {
    threshold_curve(&params.single_mode(j), detunings, bracket_dbm)
}
