//! Shared fixtures for the benchmarks.

use mtlspk::evaluation::{Segment, Timeline};
use mtlspk::frontend::Waveform;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn noise_waveform(seconds: f64, sample_rate: u32, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * sample_rate as f64) as usize;
    let samples = (0..n).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); 0.1 * z }).collect::<Vec<f64>>();
    Waveform::new(samples, sample_rate).expect("valid waveform")
}

pub fn gaussian_features(frames: usize, dim: usize, seed: u64) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((frames, dim), |_| StandardNormal.sample(&mut rng))
}

/// Contiguous turns of 1-6 s, each from a random one of `speakers`.
pub fn random_timeline(rec_id: &str, seconds: f64, speakers: usize, seed: u64) -> Timeline {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segs = Vec::new();
    let mut t = 0.0;
    while t < seconds {
        let d: f64 = rng.random_range(1.0..6.0);
        let s = rng.random_range(0..speakers);
        segs.push(Segment::new(t, (t + d).min(seconds), format!("s{s}")));
        t += d;
    }
    Timeline::new(rec_id, segs).expect("valid timeline")
}
