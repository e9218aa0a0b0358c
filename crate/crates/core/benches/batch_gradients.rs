//! Sequential versus data-parallel gradient evaluation over one batch.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use datse_core::dat::{batch_gradients, Batch, Domain, Objective, PoolRow};
use datse_core::nn::{ModelConfig, ModelParams};
use datse_core::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rows(n: usize, frames: usize, bins: usize) -> Vec<PoolRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    (0..n)
        .map(|i| {
            let source = i % 4 != 3;
            let mut v = || (0..frames * bins).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>();
            PoolRow {
                input: v(),
                target: source.then(v),
                label: if source { 1 + (i % 5) as u32 } else { 6 },
                domain: if source { Domain::Source } else { Domain::Target },
            }
        })
        .collect()
}

fn bench(c: &mut Criterion) {
    let frames = 32;
    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(10);
    for bins in [65, 257] {
        let cfg = ModelConfig { feature_dim: bins, ..ModelConfig::default() };
        let model = ModelParams::<f32>::init(cfg, 1).unwrap();
        let pool = rows(16, frames, bins);
        let batch = Batch::new(pool.iter().collect(), frames);
        for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, bins), &exec, |b, &exec| {
                b.iter(|| batch_gradients(&model, &batch, Objective::Adversarial { lambda: 0.05 }, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
