use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kore_core::adapter::{attach_kore_adapters, init_adapter, null_basis, projector, KoreConfig};
use kore_core::covariance::capture;
use kore_core::cosvd::cosvd_truncate;
use kore_core::fixtures::{null_space_fixture, random_matrix, retention_fixture, RETENTION_OLD_DIM};
use kore_core::linalg::svd;
use kore_core::trainer::{train, TrainConfig};
use kore_core::CovAccumulator;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn bench_svd(c: &mut Criterion) {
    let mut group = c.benchmark_group("svd");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [8, 16, 32] {
        let m = random_matrix(n, n, &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(n), &m, |b, m| b.iter(|| svd(black_box(m)).unwrap()));
    }
    group.finish();
}

fn bench_adapter_init(c: &mut Criterion) {
    let f = null_space_fixture(3, 24, 32, 8, 64);
    c.bench_function("null_basis/32", |b| b.iter(|| null_basis(black_box(&f.c), 8, 1e-10).unwrap()));
    let p = projector(&null_basis(&f.c, 8, 1e-10).unwrap());
    c.bench_function("init_adapter/24x32", |b| b.iter(|| init_adapter(black_box(&f.w0), &p).unwrap()));
}

fn bench_cosvd(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = random_matrix(24, 32, &mut rng);
    let mut acc = CovAccumulator::new("l", 32);
    acc.absorb(&random_matrix(32, 128, &mut rng)).unwrap();
    c.bench_function("cosvd_truncate/24x32", |b| b.iter(|| cosvd_truncate(black_box(&w), &acc, 8, None).unwrap()));
}

fn bench_train(c: &mut Criterion) {
    let f = retention_fixture(11);
    let covs = capture(&f.model, &f.capture).unwrap();
    let (model, _) = attach_kore_adapters(&f.model, &covs, &KoreConfig::new(RETENTION_OLD_DIM)).unwrap();
    let cfg = TrainConfig { base_lr: 0.05, epochs: 10, batch_size: 16, ..TrainConfig::default() };
    c.bench_function("train/10_steps", |b| {
        b.iter(|| {
            let mut m = model.clone();
            train(&mut m, &f.new_task, &cfg).unwrap()
        })
    });
}

criterion_group!(benches, bench_svd, bench_adapter_init, bench_cosvd, bench_train);
criterion_main!(benches);
