use criterion::{criterion_group, criterion_main, Criterion};
use mtlspk::frontend::{compute_mfcc, MfccConfig};
use mtlspk_bench::noise_waveform;

fn mfcc(c: &mut Criterion) {
    let cfg = MfccConfig::default();
    let wav = noise_waveform(10.0, 16_000, 1);
    c.bench_function("mfcc 10s 16kHz", |b| b.iter(|| compute_mfcc(&wav, &cfg).unwrap()));
}

criterion_group!(benches, mfcc);
criterion_main!(benches);
