//! Sequential vs parallel throughput of the read-only search loops.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use obsprune::hessian::{hessian_from_gradient_cols, Damping};
use obsprune::obs_full::{select_mask_full_in, SearchStrategy};
use obsprune::oracle::enumerate_masks_in;
use obsprune::synth::{random_matrix, seeded_rng};
use obsprune::toymodels::{proposition_experiment, AttentionModule};
use obsprune::ExecMode;
use std::hint::black_box;

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn exhaustive_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("exhaustive_mask_search");
    let mut rng = seeded_rng(1);
    let (w, g) = (random_matrix(&mut rng, 16, 12, 1.0), random_matrix(&mut rng, 16, 12, 1.0));
    let h = hessian_from_gradient_cols(&g, Damping::Relative(1e-2)).unwrap();
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::new(name, "n12_k4"), &mode, |b, &mode| {
            b.iter(|| select_mask_full_in(mode, black_box(&w), &g, &h, 4, SearchStrategy::Exhaustive).unwrap())
        });
    }
    group.finish();
}

fn oracle_enumeration(c: &mut Criterion) {
    let mut group = c.benchmark_group("oracle_enumeration");
    let mut rng = seeded_rng(2);
    let (w, g) = (random_matrix(&mut rng, 8, 10, 1.0), random_matrix(&mut rng, 8, 10, 1.0));
    let h = hessian_from_gradient_cols(&g, Damping::Relative(1e-2)).unwrap();
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::new(name, "n10_k3"), &mode, |b, &mode| {
            b.iter(|| enumerate_masks_in(mode, black_box(&w), &g, h.matrix(), 3).unwrap())
        });
    }
    group.finish();
}

fn proposition_trials(c: &mut Criterion) {
    let mut group = c.benchmark_group("proposition_trials");
    let mut rng = seeded_rng(3);
    let attn = AttentionModule::random(&mut rng, 8, 8, 0.5);
    let x = random_matrix(&mut rng, 8, 8, 1.0);
    let y = random_matrix(&mut rng, 8, 8, 1.0);
    let loss = |z: &obsprune::Matrix| 0.5 * z.sub(&y).frobenius_norm().powi(2);
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::new(name, "64_trials"), &mode, |b, &mode| {
            b.iter(|| proposition_experiment(mode, black_box(&attn), &x, &loss, 1e-3, 64, 0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, exhaustive_search, oracle_enumeration, proposition_trials);
criterion_main!(benches);
