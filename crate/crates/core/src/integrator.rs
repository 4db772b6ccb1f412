//! Dormand–Prince 8(5,3) stepper (DOP853) on the fixed 6-dimensional real
//! system, with the 7th-order continuous extension.
//!
//! Step acceptance depends only on the state and tolerances, so two runs
//! with identical inputs produce bit-identical output.

use std::cell::OnceCell;

use crate::model::Scaled;

// Coefficients of Hairer's DOP853. Rows 13..15 of A are the extra stages
// of the dense output; row 12 holds the 8th-order weights.
const A: [[f64; 16]; 16] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.05260015195876773, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0197250569845379, 0.0591751709536137, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.02958758547680685, 0.0, 0.08876275643042054, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2413651341592667, 0.0, -0.8845494793282861, 0.924834003261792, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.037037037037037035, 0.0, 0.0, 0.17082860872947386, 0.12546768756682242, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.037109375, 0.0, 0.0, 0.17025221101954405, 0.06021653898045596, -0.017578125, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.03709200011850479, 0.0, 0.0, 0.17038392571223998, 0.10726203044637328, -0.015319437748624402, 0.008273789163814023, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.6241109587160757, 0.0, 0.0, -3.3608926294469414, -0.868219346841726, 27.59209969944671, 20.154067550477894, -43.48988418106996, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.47766253643826434, 0.0, 0.0, -2.4881146199716677, -0.590290826836843, 21.230051448181193, 15.279233632882423, -33.28821096898486, -0.020331201708508627, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [-0.9371424300859873, 0.0, 0.0, 5.186372428844064, 1.0914373489967295, -8.149787010746927, -18.52006565999696, 22.739487099350505, 2.4936055526796523, -3.0467644718982196, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [2.273310147516538, 0.0, 0.0, -10.53449546673725, -2.0008720582248625, -17.9589318631188, 27.94888452941996, -2.8589982771350235, -8.87285693353063, 12.360567175794303, 0.6433927460157636, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.054293734116568765, 0.0, 0.0, 0.0, 0.0, 4.450312892752409, 1.8915178993145003, -5.801203960010585, 0.3111643669578199, -0.1521609496625161, 0.20136540080403034, 0.04471061572777259, 0.0, 0.0, 0.0, 0.0],
    [0.056167502283047954, 0.0, 0.0, 0.0, 0.0, 0.0, 0.25350021021662483, -0.2462390374708025, -0.12419142326381637, 0.15329179827876568, 0.00820105229563469, 0.007567897660545699, -0.008298, 0.0, 0.0, 0.0],
    [0.03183464816350214, 0.0, 0.0, 0.0, 0.0, 0.028300909672366776, 0.053541988307438566, -0.05492374857139099, 0.0, 0.0, -0.00010834732869724932, 0.0003825710908356584, -0.00034046500868740456, 0.1413124436746325, 0.0, 0.0],
    [-0.42889630158379194, 0.0, 0.0, 0.0, 0.0, -4.697621415361164, 7.683421196062599, 4.06898981839711, 0.3567271874552811, 0.0, 0.0, 0.0, -0.0013990241651590145, 2.9475147891527724, -9.15095847217987, 0.0],
];
const E5: [f64; 13] = [0.01312004499419488, 0.0, 0.0, 0.0, 0.0, -1.2251564463762044, -0.4957589496572502, 1.6643771824549864, -0.35032884874997366, 0.3341791187130175, 0.08192320648511571, -0.022355307863886294, 0.0];
const E3: [f64; 13] = [-0.18980075407240762, 0.0, 0.0, 0.0, 0.0, 4.450312892752409, 1.8915178993145003, -5.801203960010585, -0.4226823213237919, -0.1521609496625161, 0.20136540080403034, 0.02265179219836082, 0.0];
const D: [[f64; 16]; 4] = [
    [-8.428938276109013, 0.0, 0.0, 0.0, 0.0, 0.5667149535193777, -3.0689499459498917, 2.38466765651207, 2.117034582445028, -0.871391583777973, 2.2404374302607883, 0.6315787787694688, -0.08899033645133331, 18.148505520854727, -9.194632392478356, -4.436036387594894],
    [10.427508642579134, 0.0, 0.0, 0.0, 0.0, 242.28349177525817, 165.20045171727028, -374.5467547226902, -22.113666853125306, 7.733432668472264, -30.674084731089398, -9.332130526430229, 15.697238121770845, -31.139403219565178, -9.35292435884448, 35.81684148639408],
    [19.985053242002433, 0.0, 0.0, 0.0, 0.0, -387.0373087493518, -189.17813819516758, 527.8081592054236, -11.57390253995963, 6.8812326946963, -1.0006050966910838, 0.7777137798053443, -2.778205752353508, -60.19669523126412, 84.32040550667716, 11.99229113618279],
    [-25.69393346270375, 0.0, 0.0, 0.0, 0.0, -154.18974869023643, -231.5293791760455, 357.6391179106141, 93.40532418362432, -37.45832313645163, 104.0996495089623, 29.8402934266605, -43.53345659001114, 96.32455395918828, -39.17726167561544, -149.72683625798564],
];

const STAGES: usize = 12;

pub(crate) type Vec6 = [f64; 6];

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum StepError {
    /// Step size fell below the representable increment of t.
    Underflow,
    /// A stage produced NaN or infinity.
    NonFinite,
}

/// One accepted step; the interpolant is built on first use because it
/// costs three extra right-hand-side evaluations.
pub(crate) struct Dense {
    pub t0: f64,
    pub h: f64,
    sys: Scaled,
    y0: Vec6,
    y1: Vec6,
    k: [Vec6; 13],
    coeffs: OnceCell<[Vec6; 7]>,
}

impl Dense {
    /// State at the end of the step.
    pub fn end(&self) -> Vec6 {
        self.y1
    }

    fn build(&self) -> [Vec6; 7] {
        let h = self.h;
        let mut k = [[0.0; 6]; 16];
        k[..13].copy_from_slice(&self.k);
        for s in 13..16 {
            let y = stage_point(&self.y0, h, &A[s], &k, s);
            self.sys.rhs(&y, &mut k[s]);
        }
        let mut f = [[0.0; 6]; 7];
        for i in 0..6 {
            let dy = self.y1[i] - self.y0[i];
            f[0][i] = dy;
            f[1][i] = h * k[0][i] - dy;
            f[2][i] = 2.0 * dy - h * (k[12][i] + k[0][i]);
            for (r, row) in D.iter().enumerate() {
                let mut acc = 0.0;
                for (s, ks) in k.iter().enumerate() {
                    acc += row[s] * ks[i];
                }
                f[3 + r][i] = h * acc;
            }
        }
        f
    }

    pub fn eval(&self, t: f64) -> Vec6 {
        let f = self.coeffs.get_or_init(|| self.build());
        let x = (t - self.t0) / self.h;
        let x1 = 1.0 - x;
        let mut out = [0.0; 6];
        for i in 0..6 {
            let mut acc = f[6][i];
            for (j, fj) in f[..6].iter().enumerate().rev() {
                acc = fj[i] + if j % 2 == 0 { x1 } else { x } * acc;
            }
            out[i] = self.y0[i] + x * acc;
        }
        out
    }
}

pub(crate) struct Stepper {
    sys: Scaled,
    pub t: f64,
    pub y: Vec6,
    pub h: f64,
    pub h_max: f64,
    pub tol: f64,
    k1: Vec6,
    /// Low-order bits lost when adding each increment to `y`.
    comp: Vec6,
    pub steps: u64,
    pub rejected: u64,
}

#[inline]
fn stage_point(y: &Vec6, h: f64, a: &[f64; 16], k: &[Vec6], s: usize) -> Vec6 {
    let mut out = *y;
    for i in 0..6 {
        let mut acc = 0.0;
        for (j, kj) in k[..s].iter().enumerate() {
            acc += a[j] * kj[i];
        }
        out[i] += h * acc;
    }
    out
}

impl Stepper {
    pub fn new(sys: Scaled, t0: f64, y0: Vec6, tol: f64, h_max: f64) -> Self {
        let mut k1 = [0.0; 6];
        sys.rhs(&y0, &mut k1);
        let h = initial_step(&sys, &y0, &k1, tol).min(h_max);
        Self { sys, t: t0, y: y0, h, h_max, tol, k1, comp: [0.0; 6], steps: 0, rejected: 0 }
    }

    /// Per-component error scale: tolerance times the magnitude of the
    /// complex oscillator it belongs to, plus a small floor tied to the
    /// overall state size.
    fn scales(&self, y0: &Vec6, y1: &Vec6) -> Vec6 {
        let mag = |y: &Vec6, o: usize| (y[o] * y[o] + y[o + 1] * y[o + 1]).sqrt();
        let total: f64 = (0..3).map(|o| mag(y0, 2 * o)).fold(0.0, f64::max);
        let floor = 1e-8 * total + 1e-300;
        let mut sc = [0.0; 6];
        for o in 0..3 {
            let s = self.tol * (mag(y0, 2 * o).max(mag(y1, 2 * o)) + floor);
            sc[2 * o] = s;
            sc[2 * o + 1] = s;
        }
        sc
    }

    /// Attempts steps until one is accepted, never stepping past `t_end`.
    pub fn step(&mut self, t_end: f64) -> Result<Dense, StepError> {
        loop {
            let mut h = self.h.min(self.h_max);
            let mut last = false;
            if self.t + h >= t_end {
                h = t_end - self.t;
                last = true;
            }
            if h <= f64::EPSILON * self.t.abs().max(1.0) {
                return Err(StepError::Underflow);
            }
            let y = self.y;
            let mut k = [[0.0; 6]; 13];
            k[0] = self.k1;
            for s in 1..STAGES {
                let ys = stage_point(&y, h, &A[s], &k, s);
                self.sys.rhs(&ys, &mut k[s]);
            }
            // Compensated update: long lossless runs would otherwise drift by
            // accumulated rounding.
            let mut y_new = [0.0; 6];
            let mut comp = [0.0; 6];
            for i in 0..6 {
                let mut acc = 0.0;
                for (s, ks) in k[..STAGES].iter().enumerate() {
                    acc += A[12][s] * ks[i];
                }
                let inc = h * acc + self.comp[i];
                y_new[i] = y[i] + inc;
                comp[i] = inc - (y_new[i] - y[i]);
            }
            let mut k_new = [0.0; 6];
            self.sys.rhs(&y_new, &mut k_new);
            k[12] = k_new;
            if !y_new.iter().chain(k_new.iter()).all(|v| v.is_finite()) {
                // Retry smaller; persistent blow-up is divergence.
                self.h = 0.25 * h;
                self.rejected += 1;
                if self.h <= f64::EPSILON * self.t.abs().max(1.0) || !y.iter().all(|v| v.is_finite()) {
                    return Err(StepError::NonFinite);
                }
                continue;
            }
            let sc = self.scales(&y, &y_new);
            let (mut e5, mut e3) = (0.0, 0.0);
            for i in 0..6 {
                let (mut a5, mut a3) = (0.0, 0.0);
                for (s, ks) in k.iter().enumerate() {
                    a5 += E5[s] * ks[i];
                    a3 += E3[s] * ks[i];
                }
                e5 += (a5 / sc[i]).powi(2);
                e3 += (a3 / sc[i]).powi(2);
            }
            let en = if e5 == 0.0 && e3 == 0.0 { 0.0 } else { h * e5 / (e5 + 0.01 * e3).sqrt() };
            if !en.is_finite() {
                self.h = 0.25 * h;
                self.rejected += 1;
                continue;
            }
            if en <= 1.0 {
                let dense = Dense { t0: self.t, h, sys: self.sys, y0: y, y1: y_new, k, coeffs: OnceCell::new() };
                self.t = if last { t_end } else { self.t + h };
                self.y = y_new;
                self.comp = comp;
                self.k1 = k_new;
                self.steps += 1;
                let fac = if en == 0.0 { 6.0 } else { (0.9 * en.powf(-0.125)).clamp(0.2, 6.0) };
                // Keep the pre-clip step size when the last step was truncated to t_end.
                if !last || fac < 1.0 {
                    self.h = (h * fac).min(self.h_max);
                }
                return Ok(dense);
            }
            self.rejected += 1;
            self.h = h * (0.9 * en.powf(-0.125)).clamp(0.1, 1.0);
        }
    }
}

fn initial_step(sys: &Scaled, y0: &Vec6, f0: &Vec6, tol: f64) -> f64 {
    let d0 = y0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let d1 = f0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec6 = std::array::from_fn(|i| y0[i] + h0 * f0[i]);
    let mut f1 = [0.0; 6];
    sys.rhs(&y1, &mut f1);
    let d2 = f1.iter().zip(f0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (tol / d1.max(d2)).powf(0.125)
    };
    (100.0 * h0).min(h1)
}
