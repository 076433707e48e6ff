//! Parallel vs sequential execution of the data-parallel paths.
//!
//! `grid` compares `run_grid` with `run_grid_sequential` in one build. The
//! window scan in `excitation` always goes through `par`; compare it across
//! builds with `cargo bench` and `cargo bench --no-default-features`.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gfrls::excitation::certify_excitation;
use gfrls::simulation::{run_grid, run_grid_sequential, GridJob, RegressorKind, RunOptions, ScenarioSpec};
use gfrls::{RectMatrix, StrategySpec};

fn jobs(count: usize) -> Vec<GridJob> {
    let strategies = [
        StrategySpec::PlainRls,
        StrategySpec::ExponentialForgetting { lambda: 0.95 },
        StrategySpec::DirectionalForgettingSlow { mu: 0.95 },
    ];
    (0..count)
        .map(|i| GridJob {
            scenario: ScenarioSpec {
                n: 3,
                p: 1,
                horizon: 200,
                theta_true_0: vec![1.0, -0.5, 0.25],
                walk_bound: 0.01,
                meas_noise_bound: 0.05,
                reg_noise_bound: 0.02,
                theta_max: Some(2.0),
                regressor: RegressorKind::SinusoidalPe { amplitude: 1.0 },
                gamma: Default::default(),
                seed: i as u64,
            },
            strategy: strategies[i % strategies.len()].clone(),
            theta0: vec![0.0; 3],
            p0: 1.0,
            options: RunOptions { window: 6, rate_fit: None },
        })
        .collect()
}

fn grid(c: &mut Criterion) {
    let mut g = c.benchmark_group("grid");
    g.sample_size(10);
    for count in [8, 32] {
        let jobs = jobs(count);
        g.bench_with_input(BenchmarkId::new("parallel", count), &jobs, |b, j| {
            b.iter(|| black_box(run_grid(j)))
        });
        g.bench_with_input(BenchmarkId::new("sequential", count), &jobs, |b, j| {
            b.iter(|| black_box(run_grid_sequential(j)))
        });
    }
    g.finish();
}

fn excitation(c: &mut Criterion) {
    let seq: Vec<RectMatrix> = (0..20_000)
        .map(|k| {
            let t = k as f64;
            RectMatrix::from_row_slice(1, 4, &[t.sin(), (0.7 * t).cos(), (1.3 * t).sin(), (0.31 * t).cos()])
                .unwrap()
        })
        .collect();
    let label = if gfrls::par::is_parallel() { "parallel" } else { "sequential" };
    c.bench_function(&format!("excitation/window-scan/{label}"), |b| {
        b.iter(|| black_box(certify_excitation(&seq, 16).unwrap()))
    });
}

criterion_group!(benches, grid, excitation);
criterion_main!(benches);
