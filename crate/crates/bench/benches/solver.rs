use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use optpde::{
    interp_multilinear, interp_rbf, minimize, wave_field, BuiltinProblem, Objective,
    OptimizerConfig, SchemePolicy,
};
use optpde_bench::fixture;
use std::hint::black_box;

fn loss_and_gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_gradient");
    for n in [10, 25, 50] {
        for scheme in ["2,2", "2,4"] {
            let (p, u) = fixture(BuiltinProblem::Wave, n, 0);
            let obj = Objective::new(&p, SchemePolicy::parse(scheme).unwrap()).unwrap();
            group.bench_with_input(BenchmarkId::new(scheme, n), &u, |b, u| {
                b.iter(|| obj.breakdown_and_gradient(black_box(u.values().view())))
            });
        }
    }
    group.finish();
}

fn small_solve(c: &mut Criterion) {
    let (p, u) = fixture(BuiltinProblem::Wave, 10, 0);
    let config = OptimizerConfig::default();
    c.bench_function("solve_wave_10x10", |b| {
        b.iter(|| minimize(&p, black_box(&u), SchemePolicy::default(), &config).unwrap())
    });
}

fn interpolation(c: &mut Criterion) {
    let coarse = wave_field(BuiltinProblem::Wave.problem(25, 25).unwrap().grid).unwrap();
    let fine = BuiltinProblem::Wave.problem(50, 50).unwrap().grid;
    c.bench_function("multilinear_25_to_50", |b| {
        b.iter(|| interp_multilinear(black_box(&coarse), fine).unwrap())
    });
    let mut group = c.benchmark_group("rbf");
    group.sample_size(10);
    group.bench_function("rbf_25_to_50", |b| {
        b.iter(|| interp_rbf(black_box(&coarse), fine, 10.0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, loss_and_gradient, small_solve, interpolation);
criterion_main!(benches);
