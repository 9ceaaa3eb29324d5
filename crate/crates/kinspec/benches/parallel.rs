//! Parallel-vs-sequential benchmarks for the two hottest loops: the xi-grid
//! eigensolve behind the branch scan and the per-mode cache build + step of
//! the kinetic integrator.
//!
//! Both variants execute the identical library code; the "threads/1" case
//! pins the work to a one-thread pool, so the ratio isolates the scheduling
//! benefit. On a single-core host the two are expected to tie.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use kinspec::collision_models::{bgk_linear, bgk_quadratic};
use kinspec::experiments::sample_initial_data;
use kinspec::kinetic_solver::{kinetic_integrate, EtdScheme, KineticConfig};
use kinspec::nsf_solver::{lift_to_kinetic, Lattice};
use kinspec::spectral_analysis::hydro_branches;
use kinspec::velocity_space::{build_basis, IndexRule};

fn single_thread_pool() -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("local one-thread pool")
}

fn bench_spectral_scan(c: &mut Criterion) {
    let basis = Arc::new(build_basis(3, 5, IndexRule::TotalDegree).unwrap());
    let op = bgk_linear(basis, 1.0);
    let dirs = vec![vec![1.0, 0.0, 0.0], {
        let s = 3f64.sqrt().recip();
        vec![s, s, s]
    }];
    let radii: Vec<f64> = (0..6).map(|k| 0.01 * 1.6f64.powi(k)).collect();
    let run = || hydro_branches(&op, &dirs, &radii, 0.65).unwrap();

    let mut g = c.benchmark_group("spectral_scan");
    g.sample_size(10);
    g.bench_function("threads/default", |b| b.iter(run));
    let pool = single_thread_pool();
    g.bench_function("threads/1", |b| b.iter(|| pool.install(run)));
    g.finish();
}

fn bench_kinetic_step(c: &mut Criterion) {
    let basis = Arc::new(build_basis(2, 6, IndexRule::TotalDegree).unwrap());
    let op = bgk_linear(basis.clone(), 1.0);
    let q = bgk_quadratic(basis.clone(), 1.0);
    let lat = Arc::new(Lattice::new(2, 8, 2.0 * std::f64::consts::PI));
    let state = sample_initial_data(&lat, 11);
    let mut f0 = lift_to_kinetic(&state, &basis);
    f0.eps = 0.1;
    let cfg = KineticConfig {
        dt: 0.01,
        scheme: EtdScheme::Rk2,
        s: 1.0,
        c0: 1e3,
        output_every: 1,
    };
    // One step: dominated by the per-mode propagator cache build, the
    // par_map-heavy section of the integrator.
    let run = || kinetic_integrate(&f0, &op, Some(&q), &cfg, cfg.dt).unwrap();

    let mut g = c.benchmark_group("kinetic_step");
    g.sample_size(10);
    g.bench_function("threads/default", |b| b.iter(run));
    let pool = single_thread_pool();
    g.bench_function("threads/1", |b| b.iter(|| pool.install(run)));
    g.finish();
}

criterion_group!(benches, bench_spectral_scan, bench_kinetic_step);
criterion_main!(benches);
