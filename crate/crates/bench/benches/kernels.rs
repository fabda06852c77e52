use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use ytower_core::combinatorics::{count_compositions, delta_selection_log_sum};
use ytower_core::critical_orbit::{compute_dn_log, critical_tables, GammaStrategy};
use ytower_core::full_return::{build_return_map_with_budget, choose_omega0, support};
use ytower_core::inducing::large_scale::induce_to_large_scale;
use ytower_core::inducing::levels::build_level_sets;
use ytower_core::inducing::{fix_delta, DeltaOptions};
use ytower_core::tower_stats::{invariant_density, DensityMethod};
use ytower_core::MapSpec;

fn orbit(c: &mut Criterion) {
    let m = MapSpec::logistic(4.0).unwrap();
    c.bench_function("compute_dn_log 2000", |b| {
        b.iter(|| compute_dn_log(&m, 0.5, black_box(2000)))
    });
    c.bench_function("critical_tables 2000", |b| {
        b.iter(|| critical_tables(&m, black_box(2000), &GammaStrategy::Equalizing).unwrap())
    });
}

fn combinatorics(c: &mut Criterion) {
    c.bench_function("count_compositions 100x100", |b| {
        b.iter(|| count_compositions(black_box(100), black_box(100)))
    });
    let log_t: Vec<f64> = (1..=2000).map(|n| -(n as f64) / 3.0 * 4f64.ln()).collect();
    c.bench_function("delta_selection_log_sum n=500", |b| {
        b.iter(|| delta_selection_log_sum(&log_t, 1.0, 5, black_box(500)))
    });
}

fn inducing(c: &mut Criterion) {
    let m = MapSpec::logistic(4.0).unwrap();
    let tables = critical_tables(&m, 2000, &GammaStrategy::Equalizing).unwrap();
    let cfg = fix_delta(&m, &tables, &DeltaOptions::default()).unwrap();
    let levels = build_level_sets(&m, &cfg);
    let choice = choose_omega0(&m, 0, &cfg).unwrap();
    let w = (cfg.delta_prime / 3.0).min(choice.length());
    let (lo, _) = support(&m);
    let mut g = c.benchmark_group("inducing");
    g.sample_size(10);
    g.bench_function("induce_to_large_scale", |b| {
        b.iter(|| {
            induce_to_large_scale(&m, &cfg, &levels, (lo, lo + w), 1000, w * (1.0 - 1e-9)).unwrap()
        })
    });
    g.bench_function("return map, 5000 pieces", |b| {
        b.iter(|| build_return_map_with_budget(&m, &cfg, &levels, &choice, 2000, 5000).unwrap())
    });
    g.finish();
}

fn density(c: &mut Criterion) {
    let m = MapSpec::logistic(4.0).unwrap();
    let mut g = c.benchmark_group("density");
    g.sample_size(10);
    g.bench_function("birkhoff 4e6", |b| {
        b.iter(|| {
            invariant_density(&m, DensityMethod::BirkhoffHistogram, None, 4_000_000, 1).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, orbit, combinatorics, inducing, density);
criterion_main!(benches);
