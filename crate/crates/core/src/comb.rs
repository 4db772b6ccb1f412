//! Comb taxonomy: integer-lattice tooth assignment, regime classification,
//! the analytic Bessel comb of a prescribed mechanical cycle, and the
//! mode-competition verdict.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bessel::bessel_j_symmetric;
use crate::dynamics::{AttractorKind, AttractorReport};
use crate::model::{static_fixed_points, ModelError, PumpCondition, SystemParams};
use crate::spectral::Tooth;

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_KMAX: i32 = 6;
/// Largest Bessel order the comb series will sum.
pub const MAX_BESSEL_ORDER: usize = 1 << 14;
/// Amplitude tail beyond the summed orders, relative to the drive.
const SERIES_TAIL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CombError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(
        "ambiguous lattice assignment for tooth at {detuning_hz} Hz: candidates {candidates:?} \
         all within {tol_hz} Hz (lattice gap {min_gap_hz} Hz)"
    )]
    Ambiguous { detuning_hz: f64, candidates: Vec<(i32, i32)>, tol_hz: f64, min_gap_hz: f64 },
    #[error("Bessel series truncated: beta = {beta} needs order {required} (cap {MAX_BESSEL_ORDER})")]
    Truncation { beta: f64, required: usize },
    #[error("indeterminate competition outcome: attractor is {0}")]
    Indeterminate(AttractorKind),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeAssignment {
    pub tooth: Tooth,
    pub k1: i32,
    pub k2: i32,
    /// Detuning minus `k1 f1 + k2 f2` (Hz).
    pub residual: f64,
    pub order: u32,
}

/// Term of the comb decomposition a tooth belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombTerm {
    Carrier,
    Mode1,
    Mode2,
    Sum,
    Difference,
}

impl LatticeAssignment {
    pub fn term(&self) -> CombTerm {
        match (self.k1, self.k2) {
            (0, 0) => CombTerm::Carrier,
            (_, 0) => CombTerm::Mode1,
            (0, _) => CombTerm::Mode2,
            (a, b) if (a > 0) == (b > 0) => CombTerm::Sum,
            _ => CombTerm::Difference,
        }
    }
}

pub fn mixing_order(k1: i32, k2: i32) -> u32 {
    if k1 != 0 && k2 != 0 {
        k1.unsigned_abs().min(k2.unsigned_abs())
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeFit {
    pub assignments: Vec<LatticeAssignment>,
    /// Teeth with no lattice point within tolerance.
    pub unassigned: Vec<Tooth>,
}

/// Smallest `|d1 f1 + d2 f2|` over nonzero `(d1, d2)` in the difference box
/// of a `kmax` search, i.e. the closest two lattice points can get.
pub fn lattice_min_gap(f1: f64, f2: f64, kmax: i32) -> f64 {
    let m = 2 * kmax;
    let mut best = f64::INFINITY;
    for d1 in -m..=m {
        for d2 in -m..=m {
            if d1 == 0 && d2 == 0 {
                continue;
            }
            best = best.min((d1 as f64 * f1 + d2 as f64 * f2).abs());
        }
    }
    best
}

/// `max(3 rbw, 1e-3 f1)`.
pub fn default_tolerance(rbw: f64, f1: f64) -> f64 {
    (3.0 * rbw).max(1e-3 * f1)
}

fn check_lattice_args(f1: f64, f2: f64, tol: f64, kmax: i32) -> Result<(), CombError> {
    if !(f1 > 0.0 && f1.is_finite() && f2 > 0.0 && f2.is_finite()) {
        return Err(CombError::InvalidArgument(format!("mechanical frequencies {f1}, {f2} Hz")));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(CombError::InvalidArgument(format!("tolerance {tol} Hz")));
    }
    if !(1..=64).contains(&kmax) {
        return Err(CombError::InvalidArgument(format!("kmax {kmax} outside 1..=64")));
    }
    Ok(())
}

/// Assigns each tooth its nearest `(k1, k2)` lattice point with
/// `|k1|, |k2| <= kmax`, frequencies in Hz. Ties go to the smaller
/// `|k1| + |k2|`, then the smaller `|k2|`.
pub fn lattice_fit(teeth: &[Tooth], f1: f64, f2: f64, tol_hz: f64, kmax: i32) -> Result<LatticeFit, CombError> {
    check_lattice_args(f1, f2, tol_hz, kmax)?;
    let mut min_gap = None;
    let mut fit = LatticeFit { assignments: Vec::new(), unassigned: Vec::new() };
    for tooth in teeth {
        let d = tooth.detuning_from_pump;
        if !d.is_finite() {
            return Err(CombError::InvalidArgument(format!("tooth detuning {d}")));
        }
        // key: (|r|, |k1| + |k2|, |k2|), then residual and indices
        let mut best: Option<((f64, i32, i32), f64, i32, i32)> = None;
        let mut within = Vec::new();
        for k1 in -kmax..=kmax {
            for k2 in -kmax..=kmax {
                let r = d - (k1 as f64 * f1 + k2 as f64 * f2);
                if r.abs() <= tol_hz {
                    within.push((k1, k2));
                }
                let key = (r.abs(), k1.abs() + k2.abs(), k2.abs());
                if best.as_ref().map_or(true, |b| key < b.0) {
                    best = Some((key, r, k1, k2));
                }
            }
        }
        if within.len() > 1 {
            let gap = *min_gap.get_or_insert_with(|| lattice_min_gap(f1, f2, kmax));
            if gap <= 2.0 * tol_hz {
                return Err(CombError::Ambiguous { detuning_hz: d, candidates: within, tol_hz, min_gap_hz: gap });
            }
        }
        let (_, r, k1, k2) = best.expect("search box is non-empty");
        if r.abs() <= tol_hz {
            fit.assignments.push(LatticeAssignment { tooth: *tooth, k1, k2, residual: r, order: mixing_order(k1, k2) });
        } else {
            fit.unassigned.push(*tooth);
        }
    }
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    SinglePeak,
    Comb1,
    Comb2,
    Hybrid,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::SinglePeak => "SinglePeak",
            Regime::Comb1 => "Comb1",
            Regime::Comb2 => "Comb2",
            Regime::Hybrid => "Hybrid",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SinglePeak" => Ok(Regime::SinglePeak),
            "Comb1" => Ok(Regime::Comb1),
            "Comb2" => Ok(Regime::Comb2),
            "Hybrid" => Ok(Regime::Hybrid),
            _ => Err(format!("unknown regime '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombClassification {
    pub regime: Regime,
    pub assignments: Vec<LatticeAssignment>,
    pub unassigned: Vec<Tooth>,
    /// Hz; zero for a single peak.
    pub dominant_spacing: f64,
    pub mixing_orders_present: BTreeSet<u32>,
}

pub fn classify(teeth: &[Tooth], f1: f64, f2: f64, tol_hz: f64, kmax: i32) -> Result<CombClassification, CombError> {
    let fit = lattice_fit(teeth, f1, f2, tol_hz, kmax)?;
    Ok(classify_fit(fit, f1, f2))
}

/// Regime of an existing lattice fit.
pub fn classify_fit(fit: LatticeFit, f1: f64, f2: f64) -> CombClassification {
    let a = &fit.assignments;
    let only1: Vec<_> = a.iter().filter(|x| x.k1 != 0 && x.k2 == 0).collect();
    let only2: Vec<_> = a.iter().filter(|x| x.k2 != 0 && x.k1 == 0).collect();
    let mixed = a.iter().any(|x| x.k1 != 0 && x.k2 != 0);
    let distinct = |f: fn(&LatticeAssignment) -> i32| a.iter().map(f).collect::<BTreeSet<_>>().len();

    let regime = if mixed || (!only1.is_empty() && !only2.is_empty()) {
        Regime::Hybrid
    } else if a.iter().all(|x| x.k2 == 0) && distinct(|x| x.k1) >= 2 {
        Regime::Comb1
    } else if a.iter().all(|x| x.k1 == 0) && distinct(|x| x.k2) >= 2 {
        Regime::Comb2
    } else {
        Regime::SinglePeak
    };

    let spacing_fit = |sub: &[&LatticeAssignment], k: fn(&LatticeAssignment) -> i32| {
        let (num, den) = sub.iter().fold((0.0, 0.0), |(n, d), x| {
            let kk = k(x) as f64;
            (n + kk * x.tooth.detuning_from_pump, d + kk * kk)
        });
        num / den
    };
    let dominant_spacing = match regime {
        Regime::SinglePeak => 0.0,
        _ if only1.is_empty() && only2.is_empty() => {
            let w1: i32 = a.iter().map(|x| x.k1.abs()).sum();
            let w2: i32 = a.iter().map(|x| x.k2.abs()).sum();
            if w1 >= w2 {
                f1
            } else {
                f2
            }
        }
        _ if only1.len() >= only2.len() => spacing_fit(&only1, |x| x.k1),
        _ => spacing_fit(&only2, |x| x.k2),
    };
    let mixing_orders_present = a.iter().map(|x| x.order).collect();
    CombClassification {
        regime,
        assignments: fit.assignments,
        unassigned: fit.unassigned,
        dominant_spacing,
        mixing_orders_present,
    }
}

#[derive(Serialize, Deserialize)]
struct ToothRecord {
    freq_hz: f64,
    detuning_hz: f64,
    power_dbm: f64,
    k1: i32,
    k2: i32,
    order: u32,
    residual_hz: f64,
}

#[derive(Serialize, Deserialize)]
struct ClassificationFile {
    format_version: u32,
    regime: Regime,
    dominant_spacing_hz: f64,
    mixing_orders_present: BTreeSet<u32>,
    teeth: Vec<ToothRecord>,
    unassigned: Vec<Tooth>,
}

pub fn write_classification_json(w: &mut impl Write, c: &CombClassification) -> Result<(), CombError> {
    let file = ClassificationFile {
        format_version: FORMAT_VERSION,
        regime: c.regime,
        dominant_spacing_hz: c.dominant_spacing,
        mixing_orders_present: c.mixing_orders_present.clone(),
        teeth: c
            .assignments
            .iter()
            .map(|x| ToothRecord {
                freq_hz: x.tooth.freq,
                detuning_hz: x.tooth.detuning_from_pump,
                power_dbm: x.tooth.power_dbm,
                k1: x.k1,
                k2: x.k2,
                order: x.order,
                residual_hz: x.residual,
            })
            .collect(),
        unassigned: c.unassigned.clone(),
    };
    serde_json::to_writer_pretty(&mut *w, &file)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_classification_json(r: impl std::io::Read) -> Result<CombClassification, CombError> {
    let file: ClassificationFile = serde_json::from_reader(r)?;
    if file.format_version != FORMAT_VERSION {
        return Err(CombError::InvalidArgument(format!("format_version {}", file.format_version)));
    }
    Ok(CombClassification {
        regime: file.regime,
        assignments: file
            .teeth
            .into_iter()
            .map(|t| LatticeAssignment {
                tooth: Tooth { freq: t.freq_hz, power_dbm: t.power_dbm, detuning_from_pump: t.detuning_hz },
                k1: t.k1,
                k2: t.k2,
                residual: t.residual_hz,
                order: t.order,
            })
            .collect(),
        unassigned: file.unassigned,
        dominant_spacing: file.dominant_spacing_hz,
        mixing_orders_present: file.mixing_orders_present,
    })
}

/// Intracavity comb driven by a prescribed cycle of one mechanical mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesselComb {
    pub modulation_index: f64,
    /// Mode that carries the cycle (0 or 1).
    pub mech_mode: usize,
    /// Hz
    pub mech_freq: f64,
    /// Static-shift-corrected detuning (rad/s).
    pub delta_eff: f64,
    pub kmax: i32,
    /// `alpha_k` for `k = -kmax ..= kmax`, indexed by `k + kmax`; the
    /// `e^{-i k Omega t}` component of `a`, so tooth `k` sits at
    /// `omega_d / 2pi + k f_m`.
    pub teeth: Vec<Complex64>,
    /// `sum_{|k| > kmax} J_k(beta)^2`: comb power left out by `kmax` in
    /// the flat-filter limit.
    pub omitted_fraction: f64,
}

impl BesselComb {
    pub fn alpha(&self, k: i32) -> Complex64 {
        if k.abs() > self.kmax {
            return Complex64::new(0.0, 0.0);
        }
        self.teeth[(k + self.kmax) as usize]
    }

    pub fn total_photons(&self) -> f64 {
        self.teeth.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Field `a(t)` from the teeth kept.
    pub fn field_at(&self, t: f64) -> Complex64 {
        let w = TAU * self.mech_freq;
        (-self.kmax..=self.kmax)
            .map(|k| self.alpha(k) * Complex64::from_polar(1.0, -(k as f64) * w * t))
            .sum()
    }

    /// `|u_n|^2` summed: the time average of `|a|^2` computed in the
    /// frame that removes the phase modulation.
    pub fn mean_photons_exact(&self, params: &SystemParams, pump: &PumpCondition) -> f64 {
        let w = TAU * self.mech_freq;
        let nmax = series_order(self.modulation_index, 0).unwrap_or(MAX_BESSEL_ORDER);
        let j = bessel_j_symmetric(nmax, self.modulation_index);
        let f2 = params.kappa_e * pump.s_in * pump.s_in;
        let hk = 0.5 * params.kappa;
        (0..j.len())
            .map(|i| {
                let n = i as f64 - nmax as f64;
                let det = self.delta_eff - n * w;
                f2 * j[i] * j[i] / (hk * hk + det * det)
            })
            .sum()
    }
}

/// Smallest summation order `N` such that orders beyond `N + kmax` carry
/// less than the series tail in amplitude.
fn series_order(beta: f64, kmax: usize) -> Result<usize, CombError> {
    let ab = beta.abs();
    let mut n = (ab.ceil() as usize) + 8;
    loop {
        let top = n + kmax;
        if top > MAX_BESSEL_ORDER {
            return Err(CombError::Truncation { beta, required: top });
        }
        let j = crate::bessel::bessel_j_upto(top + 1, ab);
        if j[top].abs() + j[top + 1].abs() < SERIES_TAIL * 1e-3 {
            return Ok(n);
        }
        n = n + n / 4 + 4;
    }
}

/// Bessel comb for `b_j(t) = b_static + B e^{-i Omega_j t}`, with the
/// static displacements taken from the lowest stationary state.
pub fn bessel_comb(
    params: &SystemParams,
    pump: &PumpCondition,
    amplitude: f64,
    mode: usize,
    kmax: i32,
) -> Result<BesselComb, CombError> {
    params.validate()?;
    let fp = static_fixed_points(params, pump)?;
    let fp = fp.first().ok_or_else(|| CombError::InvalidArgument("no stationary state".into()))?;
    let shift: f64 = (0..2).map(|m| 2.0 * params.modes[m].g * fp.b[m].re).sum();
    bessel_comb_at(params, pump, pump.delta_dc - shift, amplitude, mode, kmax)
}

/// Bessel comb around an explicit effective detuning `delta_eff` (rad/s).
pub fn bessel_comb_at(
    params: &SystemParams,
    pump: &PumpCondition,
    delta_eff: f64,
    amplitude: f64,
    mode: usize,
    kmax: i32,
) -> Result<BesselComb, CombError> {
    if mode > 1 {
        return Err(CombError::InvalidArgument(format!("mechanical mode index {mode}")));
    }
    if !(amplitude >= 0.0 && amplitude.is_finite() && delta_eff.is_finite()) {
        return Err(CombError::InvalidArgument(format!("amplitude {amplitude}, detuning {delta_eff}")));
    }
    if !(0..=MAX_BESSEL_ORDER as i32).contains(&kmax) {
        return Err(CombError::InvalidArgument(format!("kmax {kmax}")));
    }
    let m = params.modes[mode];
    let beta = 2.0 * m.g * amplitude / m.omega_m;
    let kk = kmax as usize;
    let nmax = series_order(beta, kk)?;
    let top = nmax + kk;
    let j = bessel_j_symmetric(top, beta);
    let jn = |n: i64| j[(n + top as i64) as usize];
    let drive = params.kappa_e.sqrt() * pump.s_in;
    let hk = 0.5 * params.kappa;
    let u: Vec<Complex64> = (-(nmax as i64)..=nmax as i64)
        .map(|n| drive * jn(n) / Complex64::new(hk, -(delta_eff - n as f64 * m.omega_m)))
        .collect();
    let teeth = (-kmax..=kmax)
        .map(|k| {
            (-(nmax as i64)..=nmax as i64)
                .filter(|n| (n + k as i64).unsigned_abs() as usize <= top)
                .map(|n| u[(n + nmax as i64) as usize] * jn(n + k as i64))
                .sum()
        })
        .collect();
    let kept: f64 = (-(kk as i64)..=kk as i64).map(|k| jn(k).powi(2)).sum();
    let outside: f64 = (0..j.len())
        .filter(|&i| (i as i64 - top as i64).unsigned_abs() as usize > kk)
        .map(|i| j[i] * j[i])
        .sum();
    Ok(BesselComb {
        modulation_index: beta,
        mech_mode: mode,
        mech_freq: m.omega_m / TAU,
        delta_eff,
        kmax,
        teeth,
        omitted_fraction: if kept >= 1.0 { outside } else { outside.max(1.0 - kept) },
    })
}

/// Intracavity field driven by the prescribed cycle
/// `b_j(t) = b_static + B e^{-i Omega_j t}` (other mode held at its static
/// value), integrated with fixed-step RK4 from an empty cavity. Returns
/// `samples` values at `sample_rate` after discarding `40/kappa` of
/// transient.
pub fn simulate_prescribed_cycle(
    params: &SystemParams,
    pump: &PumpCondition,
    amplitude: f64,
    mode: usize,
    sample_rate: f64,
    samples: usize,
) -> Result<Vec<Complex64>, CombError> {
    params.validate()?;
    if mode > 1 || !(sample_rate > 0.0) || !(amplitude >= 0.0) {
        return Err(CombError::InvalidArgument(format!("mode {mode}, rate {sample_rate}, amplitude {amplitude}")));
    }
    let fp = static_fixed_points(params, pump)?;
    let fp = fp.first().ok_or_else(|| CombError::InvalidArgument("no stationary state".into()))?;
    let static_x: f64 = (0..2).map(|m| 2.0 * params.modes[m].g * fp.b[m].re).sum();
    let m = params.modes[mode];
    let drive = params.kappa_e.sqrt() * pump.s_in;
    let hk = 0.5 * params.kappa;
    let rhs = |t: f64, a: Complex64| {
        let x = static_x + 2.0 * m.g * amplitude * (m.omega_m * t).cos();
        Complex64::new(-hk, pump.delta_dc - x) * a + drive
    };
    let dt = 1.0 / sample_rate;
    let sub = ((dt * m.omega_m.max(params.kappa) / 0.05).ceil() as usize).max(1);
    let h = dt / sub as f64;
    let skip = (40.0 / params.kappa * sample_rate).ceil() as usize;
    let mut a = Complex64::new(0.0, 0.0);
    let mut out = Vec::with_capacity(samples);
    for i in 0..skip + samples {
        if i >= skip {
            out.push(a);
        }
        let t0 = i as f64 * dt;
        for s in 0..sub {
            let t = t0 + s as f64 * h;
            let k1 = rhs(t, a);
            let k2 = rhs(t + 0.5 * h, a + 0.5 * h * k1);
            let k3 = rhs(t + 0.5 * h, a + 0.5 * h * k2);
            let k4 = rhs(t + h, a + h * k3);
            a += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Competition {
    Mode1Wins,
    Mode2Wins,
    Coexist,
}

impl Competition {
    pub fn as_str(self) -> &'static str {
        match self {
            Competition::Mode1Wins => "mode1_wins",
            Competition::Mode2Wins => "mode2_wins",
            Competition::Coexist => "coexist",
        }
    }
}

/// Oscillation of the losing mode relative to the winner below which the
/// loser counts as suppressed.
pub const SUPPRESSION_RATIO: f64 = 0.01;

pub fn competition_outcome(report: &AttractorReport, classification: &CombClassification) -> Result<Competition, CombError> {
    match report.kind {
        AttractorKind::Undecided | AttractorKind::FixedPoint => return Err(CombError::Indeterminate(report.kind)),
        _ => {}
    }
    let [o1, o2] = report.mech_oscillation;
    Ok(match classification.regime {
        Regime::Comb1 if o2 < SUPPRESSION_RATIO * o1 => Competition::Mode1Wins,
        Regime::Comb2 if o1 < SUPPRESSION_RATIO * o2 => Competition::Mode2Wins,
        _ => Competition::Coexist,
    })
}
