//! Hop matrices and the evaluation metrics.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hopfir::metrics::{mpjpe, p_mpjpe};
use hopfir::skeleton::SkeletonGraph;
use hopfir_bench::fixture;

fn hop_matrices(c: &mut Criterion) {
    let g = SkeletonGraph::human36m(4);
    c.bench_function("hop_matrix_k1_to_4", |b| {
        b.iter(|| {
            for k in 1..=4 {
                black_box(g.hop_matrix(k).unwrap());
            }
        })
    });
}

fn metrics(c: &mut Criterion) {
    let (_, _, data) = fixture(64, 1024);
    let target = data.targets();
    // a fixed perturbation stands in for a prediction
    let pred: Vec<f64> = target.iter().enumerate().map(|(i, v)| v + 0.01 * ((i % 7) as f64 - 3.0)).collect();
    let n = data.joints;
    c.bench_function("mpjpe_1024", |b| b.iter(|| black_box(mpjpe(&pred, &target, n).unwrap())));
    c.bench_function("p_mpjpe_1024", |b| b.iter(|| black_box(p_mpjpe(&pred, &target, n).unwrap())));
}

criterion_group!(benches, hop_matrices, metrics);
criterion_main!(benches);
