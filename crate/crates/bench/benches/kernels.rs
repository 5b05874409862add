use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use distphase::adiabatic::AdiabaticState;
use distphase::model::{Mode, SweepConfig};
use distphase::propagator::{Gauge, Propagator, Truncation};

fn coupling(c: &mut Criterion) {
    let cfg = SweepConfig::default();
    let tr = Truncation::default();
    // Tip half way across the box.
    let t = -50.0;
    let mut group = c.benchmark_group("coupling_matrix");
    for gauge in [Gauge::Coulomb, Gauge::Vector] {
        let prop = Propagator::new(&cfg, gauge, tr).unwrap();
        group.bench_function(gauge.to_string(), |b| b.iter(|| prop.coupling_matrix(black_box(t))));
    }
    group.finish();
}

fn step(c: &mut Criterion) {
    let cfg = SweepConfig::default();
    let tr = Truncation::default();
    let mut group = c.benchmark_group("step");
    for gauge in [Gauge::Coulomb, Gauge::Vector] {
        let prop = Propagator::new(&cfg, gauge, tr).unwrap();
        let mut state = prop.initial_state(Mode::GROUND).unwrap();
        state.t = -50.0;
        group.bench_function(gauge.to_string(), |b| b.iter(|| prop.step(black_box(&state), 0.025).unwrap()));
    }
    group.finish();
}

fn open_path_phase(c: &mut Criterion) {
    let cfg = SweepConfig::default();
    let st = AdiabaticState::new(Mode::GROUND, &cfg).unwrap();
    c.bench_function("open_path_phase/full_sweep", |b| {
        b.iter(|| st.open_path_phase(black_box(5.0)).unwrap())
    });
}

criterion_group!(benches, coupling, step, open_path_phase);
criterion_main!(benches);
