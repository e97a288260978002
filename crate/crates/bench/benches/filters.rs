use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kalnat::prelude::*;
use nalgebra::DVector;

fn discrete(c: &mut Criterion) {
    let mut group = c.benchmark_group("discrete");
    for name in ["linear2d", "tanhspring", "logistic-static"] {
        let model = builtin(name).unwrap().discrete().unwrap();
        let scenario = generate_scenario(&model, &default_family(name).unwrap(), 200, 1).unwrap();
        let n = model.dim_state();
        let alpha = Schedule::Constant(0.05);
        let hyper = map_alpha_to_eta(&alpha, 0.5, 200).unwrap();
        let grad = NatGradConfig::new(hyper.eta_schedule(), hyper.gamma_schedule());

        group.bench_with_input(BenchmarkId::new("ekf", name), &scenario, |b, sc| {
            b.iter(|| kalnat::ekf::run(sc, &EkfConfig::fading(alpha.clone()), DVector::zeros(n), SymMatrix::identity(n)))
        });
        group.bench_with_input(BenchmarkId::new("natgrad", name), &scenario, |b, sc| {
            b.iter(|| kalnat::natgrad::run(sc, &grad, DVector::zeros(n), SymMatrix::scaled_identity(n, 0.5)))
        });
        group.bench_with_input(BenchmarkId::new("check", name), &scenario, |b, sc| {
            b.iter(|| check_discrete(sc, &DVector::zeros(n), &SymMatrix::identity(n), &DiscreteCheck::new(alpha.clone())))
        });
    }
    group.finish();
}

fn continuous(c: &mut Criterion) {
    let model = builtin("pendulum-ct").unwrap().continuous().unwrap();
    let cfg = IntegratorConfig::new(1e-3, 1.0, TimeSchedule::Constant(0.2));
    let s0 = model.initial_state().clone();
    let mut group = c.benchmark_group("continuous");
    group.sample_size(20);
    group.bench_function("bucy", |b| {
        let init = InitialCondition::Bucy { s0: s0.clone(), p0: SymMatrix::identity(2) };
        b.iter(|| integrate(black_box(&model), &init, &cfg))
    });
    group.bench_function("cngd", |b| {
        let init = InitialCondition::Cngd { s0: s0.clone(), j0: SymMatrix::scaled_identity(2, 0.5), eta0: 0.5 };
        b.iter(|| integrate(black_box(&model), &init, &cfg))
    });
    group.finish();
}

criterion_group!(benches, discrete, continuous);
criterion_main!(benches);
