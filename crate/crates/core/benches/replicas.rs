use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use randmedia::billiard::{run_lln, BilliardParams};
use randmedia::env::{build_environment, EnvSpec, JumpLaw, TruncationLevel};
use randmedia::par::{map_replicas, sequential};
use randmedia::regen::speed_direct;
use randmedia::seed::SeedStream;
use randmedia::tube::{build_tube, BoundaryPoint, TubeSpec};

fn bench_speed(c: &mut Criterion) {
    let env = build_environment(&EnvSpec::iid(JumpLaw::power_tail(0.3, 2.5, 64).unwrap()), 1).unwrap();
    let mut group = c.benchmark_group("speed_direct");
    group.sample_size(10);
    for rho in [TruncationLevel::Finite(8), TruncationLevel::Infinite] {
        group.bench_with_input(BenchmarkId::new("sequential", rho), &rho, |b, &rho| {
            b.iter(|| sequential(|| speed_direct(&env, rho, 20_000, 32, black_box(7)).unwrap()));
        });
        group.bench_with_input(BenchmarkId::new("parallel", rho), &rho, |b, &rho| {
            b.iter(|| speed_direct(&env, rho, 20_000, 32, black_box(7)).unwrap());
        });
    }
    group.finish();
}

fn bench_billiard(c: &mut Criterion) {
    let tube = build_tube(&TubeSpec::markov(vec![vec![0.2, 0.8], vec![0.8, 0.2]], vec![1.0, 1.5]), 3).unwrap();
    let params = BilliardParams::new(1.0);
    let mut group = c.benchmark_group("run_lln");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| sequential(|| run_lln(&tube, &params, 5_000, 32, black_box(1)).unwrap()));
    });
    group.bench_function("parallel", |b| {
        b.iter(|| run_lln(&tube, &params, 5_000, 32, black_box(1)).unwrap());
    });
    group.finish();
}

fn bench_rays(c: &mut Criterion) {
    let tube = build_tube(&TubeSpec::alternating(1.0, 2.0), 0).unwrap();
    let trace = |chunk: usize| {
        let mut rng = SeedStream::new(5).child(chunk as u64).rng();
        let mut view = tube.view();
        let mut hits = 0usize;
        for _ in 0..2_000 {
            let x = tube.sample_boundary_uniform(0, &mut rng);
            let n = tube.inner_normal(&x).unwrap();
            let w = randmedia::billiard::sample_cosine(n, &mut rng);
            hits += view.ray_exit(&x, w).map(|y: BoundaryPoint| y.is_step() as usize).unwrap_or(0);
        }
        hits
    };
    let mut group = c.benchmark_group("ray_exit");
    group.bench_function("sequential", |b| b.iter(|| sequential(|| map_replicas(32, trace))));
    group.bench_function("parallel", |b| b.iter(|| map_replicas(32, trace)));
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().without_plots();
    targets = bench_speed, bench_billiard, bench_rays
}
criterion_main!(benches);
