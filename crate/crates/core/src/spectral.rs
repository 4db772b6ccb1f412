//! Reflected output field, its power spectral density and tooth detection.

use crate::dynamics::Trajectory;
use crate::model::{PumpCondition, SystemParams, HBAR};
use crate::signal::{fft_in_place, hann, parabolic_peak, running_median};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("trajectory has no uniformly sampled tail")]
    MissingTail,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("spectral i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("tooth list: {0}")]
    Json(#[from] serde_json::Error),
}

/// Minimum Welch segment length.
pub const MIN_SEGMENT: usize = 1 << 12;

/// Reflected field `S_out = S_in - sqrt(kappa_e) a` in the frame rotating at
/// the pump, in units of sqrt(photons/s).
#[derive(Debug, Clone, PartialEq)]
pub struct OutputField {
    pub samples: Vec<Complex64>,
    /// Hz
    pub sample_rate: f64,
    /// rad/s
    pub omega_d: f64,
    /// Mean of the unsubtracted field over the window.
    pub carrier: Complex64,
    pub carrier_subtracted: bool,
}

impl OutputField {
    /// Mean power of the unsubtracted field (W).
    pub fn total_power_w(&self) -> f64 {
        let n = self.samples.len().max(1) as f64;
        let shift = if self.carrier_subtracted { self.carrier } else { Complex64::new(0.0, 0.0) };
        let mean_sq = self.samples.iter().map(|s| (s + shift).norm_sqr()).sum::<f64>() / n;
        HBAR * self.omega_d * mean_sq
    }
}

pub fn output_field(
    traj: &Trajectory,
    params: &SystemParams,
    pump: &PumpCondition,
    subtract_carrier: bool,
) -> Result<OutputField, SpectralError> {
    let tail = traj.dense_last_window.as_ref().ok_or(SpectralError::MissingTail)?;
    if !(tail.sample_rate > 0.0) || tail.is_empty() {
        return Err(SpectralError::MissingTail);
    }
    let root = params.kappa_e.sqrt();
    let s_in = Complex64::new(pump.s_in, 0.0);
    let mut samples: Vec<Complex64> = tail.states.iter().map(|s| s_in - root * s.a).collect();
    let carrier = samples.iter().sum::<Complex64>() / samples.len() as f64;
    if subtract_carrier {
        samples.iter_mut().for_each(|s| *s -= carrier);
    }
    Ok(OutputField {
        samples,
        sample_rate: tail.sample_rate,
        omega_d: pump.omega_d,
        carrier,
        carrier_subtracted: subtract_carrier,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    Hann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Absolute signal frequency, ascending and uniform (Hz).
    pub freqs: Vec<f64>,
    /// dBm/Hz
    pub psd: Vec<f64>,
    /// Bin spacing times the window's equivalent noise bandwidth (Hz).
    pub rbw: f64,
    /// Pump frequency (Hz).
    #[serde(rename = "ref")]
    pub ref_hz: f64,
    /// Hz
    pub bin_width: f64,
    /// Mean power of the full field including any removed carrier (dBm);
    /// sets the dynamic-range floor for tooth detection.
    pub reference_dbm: f64,
}

impl Spectrum {
    pub fn psd_watts(&self, i: usize) -> f64 {
        1e-3 * 10f64.powf(self.psd[i] / 10.0)
    }

    /// Integrated power over all bins (W).
    pub fn total_power_w(&self) -> f64 {
        (0..self.psd.len()).map(|i| self.psd_watts(i)).sum::<f64>() * self.bin_width
    }

    /// CSV columns `freq_hz, psd_dbm_per_hz`.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "freq_hz,psd_dbm_per_hz")?;
        for (f, p) in self.freqs.iter().zip(&self.psd) {
            writeln!(w, "{f:.6},{p:.6}")?;
        }
        Ok(())
    }
}

const PSD_FLOOR_W_PER_HZ: f64 = 1e-40;

fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w / 1e-3).log10()
}

/// Welch estimate with 50% overlapping Hann segments of length
/// `2 N / (segments + 1)`. Rotating-frame components `exp(-i w t)` land at
/// absolute frequency `omega_d / 2pi + w / 2pi`.
pub fn psd(
    series: &[Complex64],
    sample_rate: f64,
    omega_d: f64,
    window: Window,
    segments: usize,
) -> Result<Spectrum, SpectralError> {
    let Window::Hann = window;
    if segments == 0 {
        return Err(SpectralError::InvalidArgument("segments must be >= 1".into()));
    }
    if !(sample_rate > 0.0 && omega_d > 0.0) {
        return Err(SpectralError::InvalidArgument("sample rate and pump frequency must be positive".into()));
    }
    let n = series.len();
    let len = 2 * n / (segments + 1);
    if n < 4 * MIN_SEGMENT || len < MIN_SEGMENT {
        return Err(SpectralError::InsufficientData(format!(
            "{n} samples in {segments} segments gives {len} per segment; need >= {MIN_SEGMENT} and >= {} samples",
            4 * MIN_SEGMENT
        )));
    }
    let hop = len / 2;
    let w = hann(len);
    let w2: f64 = w.iter().map(|v| v * v).sum();
    let w1: f64 = w.iter().sum();
    let enbw = len as f64 * w2 / (w1 * w1);
    let acc: Vec<f64> = (0..segments)
        .into_par_iter()
        .map(|s| {
            let start = s * hop;
            let mut buf: Vec<Complex64> =
                series[start..start + len].iter().zip(&w).map(|(x, wi)| x.conj() * wi).collect();
            fft_in_place(&mut buf);
            buf.into_iter().map(|c| c.norm_sqr()).collect::<Vec<f64>>()
        })
        .reduce(
            || vec![0.0; len],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let photon_energy = HBAR * omega_d;
    let norm = photon_energy / (sample_rate * w2 * segments as f64);
    let df = sample_rate / len as f64;
    let f_ref = omega_d / TAU;
    let half = len / 2;
    let mut freqs = Vec::with_capacity(len);
    let mut out = Vec::with_capacity(len);
    // fftshift: bins len/2+1 .. len-1 are negative offsets, with an even
    // length the Nyquist bin is listed first.
    for i in 0..len {
        let k = (i + len - half) % len;
        let offset = if k >= len - half { k as f64 - len as f64 } else { k as f64 };
        freqs.push(f_ref + offset * df);
        out.push(watts_to_dbm((acc[k] * norm).max(PSD_FLOOR_W_PER_HZ)));
    }
    let mean_sq = series.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
    Ok(Spectrum {
        freqs,
        psd: out,
        rbw: enbw * df,
        ref_hz: f_ref,
        bin_width: df,
        reference_dbm: watts_to_dbm((photon_energy * mean_sq).max(1e-300)),
    })
}

/// PSD of an output field; the reference level keeps the removed carrier.
pub fn field_psd(field: &OutputField, segments: usize) -> Result<Spectrum, SpectralError> {
    let mut s = psd(&field.samples, field.sample_rate, field.omega_d, Window::Hann, segments)?;
    s.reference_dbm = watts_to_dbm(field.total_power_w().max(1e-300));
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tooth {
    #[serde(rename = "freq_hz")]
    pub freq: f64,
    /// Power integrated over +-2 rbw around the peak (dBm).
    pub power_dbm: f64,
    #[serde(rename = "detuning_hz")]
    pub detuning_from_pump: f64,
}

impl Tooth {
    /// Tooth at `detuning` Hz from the pump at `ref_hz`; the stored
    /// detuning is recomputed from the stored frequency so the two agree
    /// exactly.
    pub fn at(ref_hz: f64, detuning: f64, power_dbm: f64) -> Self {
        let freq = ref_hz + detuning;
        Tooth { freq, power_dbm, detuning_from_pump: freq - ref_hz }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ToothDetection {
    pub margin_db: f64,
    /// Teeth further than this below the reference level are ignored.
    pub dynamic_range_db: f64,
    /// Half width of the median floor window, in bins.
    pub median_half_width: usize,
}

impl ToothDetection {
    pub fn with_margin(margin_db: f64) -> Self {
        Self { margin_db, dynamic_range_db: 120.0, median_half_width: 64 }
    }
}

/// Teeth rising `margin_db` above the local median floor.
pub fn find_teeth(spec: &Spectrum, margin_db: f64) -> Result<Vec<Tooth>, SpectralError> {
    find_teeth_with(spec, &ToothDetection::with_margin(margin_db))
}

pub fn find_teeth_with(spec: &Spectrum, opts: &ToothDetection) -> Result<Vec<Tooth>, SpectralError> {
    if !(opts.margin_db >= 6.0) {
        return Err(SpectralError::InvalidArgument(format!("margin {} dB is below 6 dB", opts.margin_db)));
    }
    let n = spec.psd.len();
    if n < 3 {
        return Ok(Vec::new());
    }
    let median = running_median(&spec.psd, opts.median_half_width);
    let ref_density = spec.reference_dbm - 10.0 * spec.rbw.log10();
    let range_floor = ref_density - opts.dynamic_range_db;
    let half_span = (2.0 * spec.rbw / spec.bin_width).round() as usize;
    let mut teeth = Vec::new();
    for i in 1..n - 1 {
        let p = spec.psd[i];
        if !(p > spec.psd[i - 1] && p >= spec.psd[i + 1]) {
            continue;
        }
        let floor = median[i].max(range_floor);
        if p < floor + opts.margin_db {
            continue;
        }
        let (delta, _) = parabolic_peak(spec.psd[i - 1], p, spec.psd[i + 1]);
        let lo = i.saturating_sub(half_span);
        let hi = (i + half_span).min(n - 1);
        let power_w: f64 = (lo..=hi).map(|k| spec.psd_watts(k)).sum::<f64>() * spec.bin_width;
        let detuning = spec.freqs[i] - spec.ref_hz + delta * spec.bin_width;
        teeth.push(Tooth::at(spec.ref_hz, detuning, watts_to_dbm(power_w)));
    }
    teeth.sort_by(|a, b| a.freq.total_cmp(&b.freq));
    Ok(teeth)
}

pub fn write_teeth_json(w: &mut impl Write, teeth: &[Tooth]) -> Result<(), SpectralError> {
    serde_json::to_writer_pretty(&mut *w, teeth)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_teeth_json(r: impl std::io::Read) -> Result<Vec<Tooth>, SpectralError> {
    Ok(serde_json::from_reader(r)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{settle, SettleCriteria, TailSpec};
    use crate::model::desk_scale;
    use crate::stability::{first_threshold, DEFAULT_BRACKET_DBM};

    const FS: f64 = 1.0e6;
    const WD: f64 = TAU * 5.0e9;

    fn tone(n: usize, amp: f64, f0: f64) -> Vec<Complex64> {
        // exp(-i w t) sits at +f0 above the pump.
        (0..n).map(|i| Complex64::from_polar(amp, -TAU * f0 * i as f64 / FS)).collect()
    }

    #[test]
    fn tone_parseval_and_position() {
        let amp = 3.0e4;
        let f0 = 12_345.6;
        let s = psd(&tone(1 << 15, amp, f0), FS, WD, Window::Hann, 4).unwrap();
        let teeth = find_teeth(&s, 10.0).unwrap();
        assert_eq!(teeth.len(), 1, "{teeth:?}");
        let expect_w = HBAR * WD * amp * amp;
        let got_w = 1e-3 * 10f64.powf(teeth[0].power_dbm / 10.0);
        assert!((got_w / expect_w - 1.0).abs() < 0.01, "{got_w} vs {expect_w}");
        assert!((teeth[0].detuning_from_pump - f0).abs() < 0.1 * s.bin_width);
        assert_eq!(teeth[0].detuning_from_pump, teeth[0].freq - s.ref_hz);
        assert!((s.total_power_w() / expect_w - 1.0).abs() < 0.01);
    }

    #[test]
    fn rbw_is_hann_enbw() {
        let s = psd(&tone(1 << 15, 1.0, 0.0), FS, WD, Window::Hann, 4).unwrap();
        assert!((s.rbw / s.bin_width - 1.5).abs() < 1e-3);
        let d: Vec<f64> = s.freqs.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(d.iter().all(|x| (x - s.bin_width).abs() < 1e-6 * s.bin_width));
    }

    fn lcg_noise(n: usize, sigma: f64) -> Vec<Complex64> {
        // Box-Muller on a fixed LCG so the test is deterministic.
        let mut state: u64 = 0x2545_f491_4f6c_dd1d;
        let mut u = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 + 0.5) / (1u64 << 53) as f64
        };
        (0..n)
            .map(|_| {
                let r = (-2.0 * u().ln()).sqrt() * sigma / 2f64.sqrt();
                Complex64::from_polar(r, TAU * u())
            })
            .collect()
    }

    #[test]
    fn white_noise_is_flat_and_averages_down() {
        let n = 1 << 18;
        let sigma = 1e3;
        let x = lcg_noise(n, sigma);
        let s = psd(&x, FS, WD, Window::Hann, 15).unwrap();
        let expect = 10.0 * (HBAR * WD * sigma * sigma / FS / 1e-3).log10();
        let m = s.psd.len();
        for band in 0..8 {
            let sl = &s.psd[band * m / 8..(band + 1) * m / 8];
            let mean_w = sl.iter().map(|p| 10f64.powf(p / 10.0)).sum::<f64>() / sl.len() as f64;
            assert!((10.0 * mean_w.log10() - expect).abs() < 0.5);
        }
        // Fixed segment length 4096: doubling the segment count halves the variance.
        let var_db = |segs: usize| {
            let len = 4096;
            let s = psd(&x[..(segs + 1) * len / 2], FS, WD, Window::Hann, segs).unwrap();
            let lin: Vec<f64> = s.psd.iter().map(|p| 10f64.powf(p / 10.0)).collect();
            let mean = lin.iter().sum::<f64>() / lin.len() as f64;
            let var = lin.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / lin.len() as f64;
            10.0 * var.log10()
        };
        for k in [8, 16] {
            let drop = var_db(k) - var_db(2 * k);
            assert!((drop - 3.0).abs() < 0.5, "{k}: {drop}");
        }
    }

    #[test]
    fn weak_tone_near_strong_one() {
        let n = 1 << 15;
        let len = 2 * n / 5;
        let df = FS / len as f64;
        let strong = tone(n, 1.0, 100.3 * df);
        let weak = tone(n, 1e-2, 110.3 * df);
        let x: Vec<Complex64> = strong.iter().zip(&weak).map(|(a, b)| a + b).collect();
        let s = psd(&x, FS, WD, Window::Hann, 4).unwrap();
        let teeth = find_teeth(&s, 6.0).unwrap();
        assert_eq!(teeth.len(), 2, "{teeth:?}");
        assert!((teeth[1].detuning_from_pump - 110.3 * df).abs() < 0.1 * df);
        assert!((teeth[0].power_dbm - teeth[1].power_dbm - 40.0).abs() < 0.5);
    }

    #[test]
    fn rejects_short_series_and_small_margin() {
        assert!(matches!(
            psd(&tone(1000, 1.0, 0.0), FS, WD, Window::Hann, 4),
            Err(SpectralError::InsufficientData(_))
        ));
        let s = psd(&tone(1 << 15, 1.0, 0.0), FS, WD, Window::Hann, 4).unwrap();
        assert!(find_teeth(&s, 3.0).is_err());
    }

    #[test]
    fn teeth_json_round_trip() {
        let teeth = vec![Tooth::at(5e9, 756e3, -80.0), Tooth::at(5e9, -1.75e6, -95.5)];
        let mut buf = Vec::new();
        write_teeth_json(&mut buf, &teeth).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("freq_hz") && text.contains("detuning_hz") && text.contains("power_dbm"));
        assert_eq!(read_teeth_json(buf.as_slice()).unwrap(), teeth);
    }

    #[test]
    fn below_threshold_run_has_no_teeth_and_carrier_removal_works() {
        let p = desk_scale().params;
        let d = p.modes[0].omega_m;
        let thr = first_threshold(&p, d, DEFAULT_BRACKET_DBM, 1.0).unwrap().unwrap();
        let pump = PumpCondition::new(&p, d, thr.dbm - 6.0);
        let mut crit = SettleCriteria::new(&p, 0.05);
        crit.tail = TailSpec { duration: 20_000.0 / crit.tail.sample_rate, sample_rate: crit.tail.sample_rate };
        let (traj, rep) = settle(&p, &pump, &crit).unwrap();
        assert_eq!(rep.kind, crate::dynamics::AttractorKind::FixedPoint);
        let raw = field_psd(&output_field(&traj, &p, &pump, false).unwrap(), 4).unwrap();
        let sub = field_psd(&output_field(&traj, &p, &pump, true).unwrap(), 4).unwrap();
        let dc = raw.freqs.iter().position(|f| *f == raw.ref_hz).unwrap();
        assert!(raw.psd[dc] - sub.psd[dc] >= 60.0, "{} {}", raw.psd[dc], sub.psd[dc]);
        assert!(find_teeth(&sub, 10.0).unwrap().is_empty());
        // The unsubtracted carrier is one tooth at the pump.
        let t = find_teeth(&raw, 10.0).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t[0].detuning_from_pump.abs() < raw.bin_width);
    }

    #[test]
    fn empty_cavity_reflects_input() {
        let p = desk_scale().params;
        let pump = PumpCondition::new(&p, 0.0, -60.0);
        let traj = Trajectory {
            params: p,
            pump,
            t: vec![0.0],
            states: vec![crate::model::SystemState::ZERO],
            dense_last_window: Some(crate::dynamics::UniformWindow {
                t0: 0.0,
                sample_rate: 1e6,
                states: vec![crate::model::SystemState::ZERO; 8],
            }),
            reference: None,
            steps: 0,
            rejected: 0,
        };
        let f = output_field(&traj, &p, &pump, false).unwrap();
        assert!(f.samples.iter().all(|s| *s == Complex64::new(pump.s_in, 0.0)));
    }

    #[test]
    fn critically_coupled_resonance_flips_phase() {
        let mut p = desk_scale().params.decoupled();
        p.kappa_e = p.kappa;
        let pump = PumpCondition::new(&p, 0.0, -60.0);
        let fp = crate::model::static_fixed_points(&p, &pump).unwrap()[0];
        let out = Complex64::new(pump.s_in, 0.0) - p.kappa_e.sqrt() * fp.a;
        assert!((out + pump.s_in).norm() < 1e-12 * pump.s_in);
    }
}
