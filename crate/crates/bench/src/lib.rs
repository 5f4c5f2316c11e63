//! Shared fixtures for the benchmarks in `benches/`.

use pvfed_core::harness::RunConfig;

/// A fault-free run with `rho` just above the smallest allowed value.
pub fn round_config(n_c: u32, n_a: u32, horizon: u64) -> RunConfig {
    let k = (n_c / n_a) as f64;
    let rho = (1.0 + (1.0 + k).sqrt()).floor() as usize + 1;
    let mut c = RunConfig::new(n_c, n_a, 0, (n_a - 1) / 3, rho, horizon);
    c.name = "bench".into();
    c
}
