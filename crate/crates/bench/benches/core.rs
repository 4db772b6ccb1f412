use std::f64::consts::TAU;
use std::hint::black_box;

use combsim::comb::simulate_prescribed_cycle;
use combsim::model::desk_scale;
use combsim::spectral::{psd, Window};
use combsim::{eom_rhs, integrate, lattice_fit, PumpCondition, SystemState, Tooth};
use criterion::{criterion_group, criterion_main, Criterion};
use num_complex::Complex64;

fn rhs(c: &mut Criterion) {
    let p = desk_scale().params;
    let pump = PumpCondition::new(&p, p.modes[0].omega_m, -70.0);
    let s = SystemState::new(Complex64::new(30.0, -4.0), Complex64::new(1e3, 2e2), Complex64::new(-5e1, 3e1));
    c.bench_function("eom_rhs", |b| b.iter(|| eom_rhs(black_box(&s), &p, &pump).unwrap()));
}

fn short_integration(c: &mut Criterion) {
    let p = desk_scale().params;
    let pump = PumpCondition::new(&p, p.modes[0].omega_m, -66.0);
    let s = SystemState::new(Complex64::new(10.0, 0.0), Complex64::new(1e3, 0.0), Complex64::new(0.0, 1e3));
    let horizon = 200.0 * TAU / p.modes[0].omega_m;
    c.bench_function("integrate 200 periods", |b| b.iter(|| integrate(&p, &pump, black_box(&s), horizon, 1e-9).unwrap()));
}

fn spectrum(c: &mut Criterion) {
    let p = desk_scale().params;
    let pump = PumpCondition::new(&p, p.modes[0].omega_m, -72.0);
    let fs = 32.0 * p.modes[0].omega_m / TAU;
    let series = simulate_prescribed_cycle(&p, &pump, 2.0 * p.unit_modulation_amplitude(0), 0, fs, 1 << 16).unwrap();
    c.bench_function("psd 2^16 hann x4", |b| b.iter(|| psd(black_box(&series), fs, pump.omega_d, Window::Hann, 4).unwrap()));
}

fn lattice(c: &mut Criterion) {
    let (f1, f2) = (756e3, 1.75e6);
    let teeth: Vec<Tooth> = (-4..=4)
        .flat_map(|k1| (-3..=3).map(move |k2| Tooth::at(5.31e9, k1 as f64 * f1 + k2 as f64 * f2, -80.0)))
        .collect();
    c.bench_function("lattice_fit 63 teeth", |b| b.iter(|| lattice_fit(black_box(&teeth), f1, f2, 4.8e3, 6).unwrap()));
}

criterion_group!(benches, rhs, short_integration, spectrum, lattice);
criterion_main!(benches);
