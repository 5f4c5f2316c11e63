use criterion::{criterion_group, criterion_main, Criterion};

use pvfed_bench::round_config;
use pvfed_core::harness::run_prepared;

fn rounds(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulated round");
    g.sample_size(10);
    for (n_c, n_a) in [(40, 1), (80, 4), (140, 7)] {
        let cfg = round_config(n_c, n_a, 1);
        let prepared = cfg.prepare().unwrap();
        g.bench_function(format!("n_c={n_c} n_a={n_a}"), |b| {
            b.iter(|| run_prepared(cfg.clone(), prepared.clone()))
        });
    }
    g.finish();
}

criterion_group!(benches, rounds);
criterion_main!(benches);
