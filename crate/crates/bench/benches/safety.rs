use std::hint::black_box;

use acat_bench::{disagreeing_channels, healthy_channels};
use acat_core::safety::{step_safety, SafetyConfig};
use acat_core::SafetyState;
use criterion::{criterion_group, criterion_main, Criterion};

fn step(c: &mut Criterion) {
    let cfg = SafetyConfig::default();
    let state = SafetyState::running();
    let healthy = healthy_channels();
    let split = disagreeing_channels(1_000);
    c.bench_function("step_safety/healthy", |b| {
        b.iter(|| step_safety(black_box(&state), black_box(&healthy), false, 5_000, &cfg).unwrap())
    });
    c.bench_function("step_safety/discrepancy", |b| {
        b.iter(|| step_safety(black_box(&state), black_box(&split), false, 500_000, &cfg).unwrap())
    });
}

criterion_group!(benches, step);
criterion_main!(benches);
