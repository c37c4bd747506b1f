use std::hint::black_box;

use acat_bench::drop_profile;
use acat_core::goniometry::fit_circle;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_circle");
    for n in [50, 200, 1000] {
        let profile = drop_profile(72.0, n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &profile, |b, p| {
            b.iter(|| fit_circle(black_box(p)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, fit);
criterion_main!(benches);
