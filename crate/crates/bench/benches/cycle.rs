use acat_core::{Scenario, Simulation};
use criterion::{criterion_group, criterion_main, Criterion};

fn full_cycle(c: &mut Criterion) {
    let mut group = c.benchmark_group("full_cycle");
    group.sample_size(10);
    group.bench_function("fast_forward", |b| b.iter(|| Simulation::new(Scenario::default()).run_to_end().unwrap()));
    group.bench_function("every_tick", |b| {
        b.iter(|| Simulation::new(Scenario::default()).with_fast_forward(false).run_to_end().unwrap())
    });
    group.finish();
}

criterion_group!(benches, full_cycle);
criterion_main!(benches);
