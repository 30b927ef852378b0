use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rfek_bench::{combined, solved_with_observations, SIZES};
use rfek_core::{backward, loss_grad_mse, solve, solve_jacobi, SolveOptions};

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    for n in SIZES {
        let p = combined(n);
        group.bench_with_input(BenchmarkId::new("sweep", n), &p, |b, p| {
            b.iter(|| solve(&p.metric, &p.drift, &p.sources, p.spec, &SolveOptions::default()).unwrap())
        });
        let jopts = SolveOptions::with_tol(1e-6, 100 * n);
        group.bench_with_input(BenchmarkId::new("jacobi", n), &p, |b, p| {
            b.iter(|| solve_jacobi(&p.metric, &p.drift, &p.sources, p.spec, &jopts).unwrap())
        });
    }
    group.finish();
}

fn adjoint(c: &mut Criterion) {
    let mut group = c.benchmark_group("backward");
    group.sample_size(10);
    for n in SIZES {
        let p = combined(n);
        let (t, obs) = solved_with_observations(&p);
        let g = loss_grad_mse(&t, &obs).unwrap().grad;
        group.bench_with_input(BenchmarkId::from_parameter(n), &p, |b, p| {
            b.iter(|| backward(&t, &p.metric, &p.drift, &p.sources, p.spec, 1e-6, &g).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, forward, adjoint);
criterion_main!(benches);
