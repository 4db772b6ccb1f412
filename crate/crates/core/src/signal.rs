//! Small DSP helpers shared by the attractor classifier and the PSD code.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::TAU;

/// Periodic Hann window of length `n` (the DFT-even form used for spectral
/// estimation).
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (TAU * i as f64 / n as f64).cos())
        .collect()
}

/// In-place forward FFT.
pub fn fft_in_place(buf: &mut [Complex64]) {
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(buf.len()).process(buf);
}

/// Vertex offset in `[-0.5, 0.5]` of the parabola through three equally
/// spaced samples, together with the interpolated peak value.
pub fn parabolic_peak(left: f64, mid: f64, right: f64) -> (f64, f64) {
    let denom = left - 2.0 * mid + right;
    if denom == 0.0 || !denom.is_finite() {
        return (0.0, mid);
    }
    let delta = (0.5 * (left - right) / denom).clamp(-0.5, 0.5);
    (delta, mid - 0.25 * (left - right) * delta)
}

/// Running median with a centred window of `2 * half + 1` samples,
/// truncated at the edges.
pub fn running_median(x: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    let mut buf: Vec<f64> = Vec::with_capacity(2 * half + 1);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        buf.clear();
        buf.extend_from_slice(&x[lo..hi]);
        let mid = buf.len() / 2;
        let (_, m, _) = buf.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
        out.push(*m);
    }
    out
}

/// Peaks of a real signal's magnitude spectrum: `(frequency Hz, amplitude)`
/// for every local maximum at positive frequency whose amplitude is at
/// least `rel` times the largest one. The mean is removed first.
pub fn real_spectrum_peaks(x: &[f64], sample_rate: f64, rel: f64) -> Vec<(f64, f64)> {
    let n = x.len();
    if n < 8 {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let w = hann(n);
    let mut buf: Vec<Complex64> = x
        .iter()
        .zip(&w)
        .map(|(v, wi)| Complex64::new((v - mean) * wi, 0.0))
        .collect();
    fft_in_place(&mut buf);
    let half = n / 2;
    let mag: Vec<f64> = buf[..=half].iter().map(|c| c.norm()).collect();
    let max = mag[1..].iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Vec::new();
    }
    let df = sample_rate / n as f64;
    let mut peaks = Vec::new();
    for k in 2..half {
        if mag[k] >= rel * max && mag[k] > mag[k - 1] && mag[k] >= mag[k + 1] {
            let (d, _) = parabolic_peak(mag[k - 1].ln(), mag[k].ln(), mag[k + 1].ln());
            peaks.push(((k as f64 + d) * df, mag[k]));
        }
    }
    peaks
}
