use std::f64::consts::TAU;

use combsim::model::{desk_scale, paper_device};
use combsim::{dbm_to_flux, eom_rhs, flux_to_dbm, static_fixed_points, PumpCondition, SystemParams, SystemState};
use num_complex::Complex64;
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// Reference values below come from a 40-digit mpmath transcription of the
// equations of motion and of the static cubic, fed the exact binary64
// inputs (the detuning is omega_d - omega_c as stored, not 2pi * 756 kHz).

#[test]
fn rhs_matches_high_precision_transcription() {
    let p = paper_device().params;
    let pump = PumpCondition::new(&p, p.modes[0].omega_m, -75.0);
    assert!(rel(pump.s_in, 2_997_738.952_770_540_247_809_002) < 1e-14);

    let state = SystemState::new(Complex64::new(1.0, 0.0), Complex64::default(), Complex64::default());
    let d = eom_rhs(&state, &p, &pump).unwrap();
    assert!(rel(d.a.re, 3_274_177_544.525_191_768_955_383) < 1e-14);
    assert!(rel(d.a.im, 4_750_088.092_227_935_791_015_625) < 1e-14);
    assert_eq!(d.b[0].re, 0.0);
    assert_eq!(d.b[1].re, 0.0);
    assert!(rel(d.b[0].im, -3.078_760_800_517_997_164_860_162) < 1e-14);
    assert!(rel(d.b[1].im, -0.439_822_971_502_571_102_853_096_4) < 1e-14);
}

#[test]
fn flux_at_minus_75_dbm() {
    let s = dbm_to_flux(-75.0, TAU * 5.3118e9);
    assert!(rel(s * s, 8.99e12) < 2e-3, "S^2 = {:e}", s * s);
}

fn photon_roots(p: &SystemParams, delta: f64, dbm: f64) -> Vec<f64> {
    let pump = PumpCondition::new(p, delta, dbm);
    static_fixed_points(p, &pump).unwrap().iter().map(|s| s.photons()).collect()
}

#[test]
fn fixed_points_match_sign_scan() {
    let p = paper_device().params;
    let w1 = p.modes[0].omega_m;
    let cases: [(f64, f64, &[f64]); 3] = [
        (w1, -75.0, &[447_216.222_712_852_278_32]),
        (-0.3 * w1, 10.0, &[6_170_668_790_244.136_304_6]),
        (
            -3.0 * p.kappa,
            -17.0,
            &[152_878_230_571.592_199_27, 1_294_543_747_723.590_130_8, 2_110_712_717_572.368_566_6],
        ),
    ];
    for (delta, dbm, want) in cases {
        let got = photon_roots(&p, delta, dbm);
        assert_eq!(got.len(), want.len(), "root count at {dbm} dBm");
        for (g, w) in got.iter().zip(want) {
            assert!(rel(*g, *w) < 1e-8, "{g} vs {w}");
        }
    }
}

#[test]
fn bistable_window_edges() {
    // Outside the folds at -21.30 and -13.73 dBm there is a single root.
    let p = paper_device().params;
    let d = -3.0 * p.kappa;
    assert_eq!(photon_roots(&p, d, -21.5).len(), 1);
    assert_eq!(photon_roots(&p, d, -21.1).len(), 3);
    assert_eq!(photon_roots(&p, d, -13.9).len(), 3);
    assert_eq!(photon_roots(&p, d, -13.5).len(), 1);
}

#[test]
fn static_mechanics_residual() {
    for p in [paper_device().params, desk_scale().params] {
        for (delta, dbm) in [(p.modes[0].omega_m, -75.0), (-3.0 * p.kappa, -17.0), (0.5 * p.modes[0].omega_m, -40.0)] {
            let pump = PumpCondition::new(&p, delta, dbm);
            for fp in static_fixed_points(&p, &pump).unwrap() {
                let d = eom_rhs(&fp, &p, &pump).unwrap();
                for j in 0..2 {
                    assert!(d.b[j].norm() < 1e-12 * fp.b[j].norm() * p.modes[j].omega_m, "mode {j}: {:e}", d.b[j].norm());
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn flux_is_strictly_monotone(x in -200.0f64..60.0, dx in 1e-6f64..50.0, f in 1e9f64..1e10) {
        let w = TAU * f;
        prop_assert!(dbm_to_flux(x + dx, w) > dbm_to_flux(x, w));
        prop_assert!((flux_to_dbm(dbm_to_flux(x, w), w) - x).abs() < 1e-12 * x.abs().max(1.0));
    }

    #[test]
    fn coupling_rescale_preserves_g2n(c in 0.2f64..5.0, k in 0usize..3) {
        let p = paper_device().params;
        let (delta, dbm) = [(p.modes[0].omega_m, -75.0), (-0.3 * p.modes[0].omega_m, 10.0), (-3.0 * p.kappa, -17.0)][k];
        let base = PumpCondition::new(&p, delta, dbm);
        let mut q = p;
        for m in q.modes.iter_mut() {
            m.g *= c;
        }
        let scaled = PumpCondition::from_flux(&q, delta, base.s_in / c);
        let n0: Vec<f64> = static_fixed_points(&p, &base).unwrap().iter().map(|s| s.photons()).collect();
        let n1: Vec<f64> = static_fixed_points(&q, &scaled).unwrap().iter().map(|s| s.photons() * c * c).collect();
        prop_assert_eq!(n0.len(), n1.len());
        for (a, b) in n0.iter().zip(&n1) {
            prop_assert!(rel(*b, *a) < 1e-9, "{} vs {}", b, a);
        }
    }
}
