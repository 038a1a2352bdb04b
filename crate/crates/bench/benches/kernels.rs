use criterion::{black_box, criterion_group, criterion_main, Criterion};

use homoglab::solver::DirichletProblem;
use homoglab::{convex_envelope, mu_estimate, subdiff_measure, BoundaryData, GridFunction, MuConfig, Region, TriadicCube};
use homoglab_bench::{checkerboard_field, wavy, N};

fn envelope(c: &mut Criterion) {
    let u = wavy(N);
    let region = Region::interior_of(u.square());
    c.bench_function("hull_82", |b| b.iter(|| convex_envelope(black_box(&u))));
    c.bench_function("subdiff_measure_82", |b| b.iter(|| subdiff_measure(black_box(&u), &region)));
}

fn solver(c: &mut Criterion) {
    let field = checkerboard_field(1, 0);
    let sq = TriadicCube::origin(1).square();
    let f = GridFunction::from_fn(sq, N, |_| 0.0);
    let mut p = DirichletProblem::new(&field, sq, N).unwrap();
    c.bench_function("dirichlet_82_cached", |b| {
        b.iter(|| p.solve(black_box(&f), &BoundaryData::Zero, 1e-8).unwrap())
    });
    c.bench_function("dirichlet_82_fresh", |b| {
        b.iter(|| {
            let mut p = DirichletProblem::new(&field, sq, N).unwrap();
            p.solve(black_box(&f), &BoundaryData::Zero, 1e-8).unwrap()
        })
    });
}

fn mu(c: &mut Criterion) {
    let field = checkerboard_field(1, 3);
    let cfg = MuConfig { optimize: false, ..MuConfig::default() };
    let mut g = c.benchmark_group("mu");
    g.sample_size(10);
    g.bench_function("mu_q1_initial_candidates", |b| {
        b.iter(|| mu_estimate(black_box(&field), TriadicCube::origin(1), cfg).unwrap())
    });
    g.finish();
}

criterion_group!(benches, envelope, solver, mu);
criterion_main!(benches);
