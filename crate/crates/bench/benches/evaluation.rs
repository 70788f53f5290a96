use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mtlspk::evaluation::{ahc_cluster, compute_der, compute_eer, DerConfig, Scope, SimilarityMatrix};
use mtlspk_bench::{gaussian_features, random_timeline};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ahc(c: &mut Criterion) {
    let mut group = c.benchmark_group("ahc");
    for n in [100, 400] {
        let sim = SimilarityMatrix::cosine(gaussian_features(n, 32, 3).view()).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &sim, |b, sim| b.iter(|| ahc_cluster(sim, 4).unwrap()));
    }
    group.finish();
}

fn der(c: &mut Criterion) {
    let reference = random_timeline("r", 600.0, 4, 4);
    let hypothesis = random_timeline("r", 600.0, 4, 5);
    c.bench_function("der 10 min", |b| {
        b.iter(|| compute_der(&reference, &hypothesis, Scope::All, &DerConfig::default()).unwrap())
    });
}

fn eer(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let scores: Vec<(f64, bool)> = (0..10_000)
        .map(|_| {
            let target = rng.random_bool(0.5);
            (rng.random::<f64>() + if target { 0.3 } else { 0.0 }, target)
        })
        .collect();
    c.bench_function("eer 10k trials", |b| b.iter(|| compute_eer(&scores).unwrap()));
}

criterion_group!(benches, ahc, der, eer);
criterion_main!(benches);
