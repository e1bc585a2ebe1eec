use std::collections::BTreeSet;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hypograph_bench::{layered_graph, pool_fixture};
use hypograph_core::explorer::{score_pool, score_triplet, ComplexEmbedding};
use hypograph_core::pi_scoring::score_all;
use hypograph_core::ScoringWeights;
use std::hint::black_box;

fn triplet(c: &mut Criterion) {
    let mut group = c.benchmark_group("score_triplet");
    for d in [8, 64, 256] {
        let v = |s: f64| ComplexEmbedding::new((0..d).map(|i| (i as f64 * s).sin()).collect(), (0..d).map(|i| (i as f64 * s).cos()).collect());
        let (h, r, t) = (v(0.1), v(0.2), v(0.3));
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| b.iter(|| score_triplet(black_box(&h), &r, &t)));
    }
    group.finish();
}

fn pool(c: &mut Criterion) {
    let f = pool_fixture();
    let none = BTreeSet::new();
    c.bench_function("score_pool/demo", |b| {
        b.iter(|| score_pool(black_box(&f.query), &f.world.kg, &f.world.embeddings, &f.params, &none))
    });
}

fn aggregate(c: &mut Criterion) {
    let mut group = c.benchmark_group("score_all");
    let weights = ScoringWeights::default();
    for (h, depth) in [(5, 2), (5, 4), (20, 3)] {
        let g = layered_graph(h, depth, 3, 7);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{h}x{depth}")), &g, |b, g| {
            b.iter(|| score_all(black_box(g), &weights))
        });
    }
    group.finish();
}

criterion_group!(benches, triplet, pool, aggregate);
criterion_main!(benches);
