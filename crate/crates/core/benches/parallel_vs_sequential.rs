//! Benchmark cells run on a one-thread pool versus the default pool. Without the
//! `parallel` feature only the sequential fallback is measured.

use criterion::{criterion_group, criterion_main, Criterion};
use gaze_aware::bench::{denoise_bench, gradcheck_suite};
use gaze_aware::config::Config;
use gaze_aware::LossWeights;

fn workloads(c: &mut Criterion) {
    let cfg = Config::default();
    let denoise = || denoise_bench(&cfg, 0, &[0.1, 0.2], 2).unwrap();
    let grads = || gradcheck_suite(&LossWeights::default(), 0, 2).unwrap();

    let mut group = c.benchmark_group("denoise_bench");
    group.sample_size(10);
    run(&mut group, denoise);
    group.finish();

    let mut group = c.benchmark_group("gradcheck_suite");
    group.sample_size(10);
    run(&mut group, grads);
    group.finish();
}

#[cfg(feature = "parallel")]
fn run<T: Send>(group: &mut criterion::BenchmarkGroup<'_, criterion::measurement::WallTime>, f: impl Fn() -> T + Sync) {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    group.bench_function("sequential", |b| b.iter(|| single.install(&f)));
    group.bench_function("parallel", |b| b.iter(&f));
}

#[cfg(not(feature = "parallel"))]
fn run<T: Send>(group: &mut criterion::BenchmarkGroup<'_, criterion::measurement::WallTime>, f: impl Fn() -> T + Sync) {
    group.bench_function("sequential", |b| b.iter(&f));
}

criterion_group!(benches, workloads);
criterion_main!(benches);
