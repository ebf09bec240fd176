//! Benchmarks for the data-parallel hot paths, comparing single-threaded and
//! multi-threaded execution of the same kernels. Build with
//! `--no-default-features` to time the sequential fallback itself.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use spotfutures::policy::ZeroPolicy;
use spotfutures::{
    simulate_bundle, solve_hjb, DemandModel, FuturesModel, FuturesUpdate, GridSpec, RiskPrice,
};

fn bench_model() -> FuturesModel {
    FuturesModel {
        demand: DemandModel {
            mean_reversion: -1.0,
            sigma: 0.2,
            initial_demand: 1.0,
        },
        risk: RiskPrice::constant(0.1, 0.0, 1.0),
        spot: spotfutures::SpotMap {
            price_scale: 1.0,
            capacity: 10.0,
            scarcity_floor: 1.0,
            cost_exponent: 0.5,
            cost_cap: 9.0,
        },
        maturity: 1.0,
        quad_order: 128,
        mc_paths: 1000,
    }
}

fn bench_producer() -> spotfutures::ProducerSpec {
    spotfutures::ProducerSpec {
        cost: spotfutures::CostSpec {
            production_linear: 0.0,
            production_quadratic: 0.5,
            storage_linear: 0.05,
            storage_quadratic: 0.0,
        },
        max_production: 1.0,
        min_storage_rate: -0.5,
        max_storage_rate: 0.5,
        storage_capacity: 1.0,
        initial_stock: 0.5,
        initial_wealth: 1.0,
        utility_exponent: 0.5,
    }
}

/// Runs `f` on a rayon pool with `threads` workers when the parallel feature
/// is on; otherwise runs it directly (the sequential fallback).
fn with_threads<T>(threads: usize, f: impl FnOnce() -> T + Send) -> T
where
    T: Send,
{
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

fn thread_counts() -> Vec<usize> {
    #[cfg(feature = "parallel")]
    {
        let n = std::thread::available_parallelism().map_or(4, |c| c.get());
        if n > 1 {
            vec![1, n]
        } else {
            vec![1]
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        vec![1]
    }
}

fn curve_surface(c: &mut Criterion) {
    let fm = bench_model();
    let times: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
    let demands: Vec<f64> = (0..64).map(|k| -1.0 + 4.0 * k as f64 / 63.0).collect();
    let mut group = c.benchmark_group("curve_surface");
    group.sample_size(10);
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &n| {
            b.iter(|| with_threads(n, || fm.curve_table(&times, &demands).unwrap()));
        });
    }
    group.finish();
}

fn bundle_simulation(c: &mut Criterion) {
    let fm = bench_model();
    let spec = bench_producer();
    let mut group = c.benchmark_group("simulate_bundle");
    group.sample_size(10);
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &n| {
            b.iter(|| {
                with_threads(n, || {
                    simulate_bundle(
                        &fm,
                        &spec,
                        &ZeroPolicy,
                        512,
                        64,
                        7,
                        FuturesUpdate::Functional,
                    )
                    .unwrap()
                })
            });
        });
    }
    group.finish();
}

fn hjb_solve(c: &mut Criterion) {
    let fm = bench_model();
    let spec = bench_producer();
    let grid = GridSpec {
        wealth_max: 2.0,
        nr: 17,
        nx: 17,
        nd: 21,
        nt: None,
        demand_min: -1.0,
        demand_max: 3.0,
        theta_cap: 2.0,
    };
    let mut group = c.benchmark_group("hjb_solve");
    group.sample_size(10);
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &n| {
            b.iter(|| with_threads(n, || solve_hjb(&fm, &spec, &grid).unwrap()));
        });
    }
    group.finish();
}

criterion_group!(benches, curve_surface, bundle_simulation, hjb_solve);
criterion_main!(benches);
