//! Synthetic Gaussian speakers for tests, benchmarks and smoke runs. Each
//! speaker is a mean vector; frames are that mean plus isotropic noise.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpeakers {
    /// `n_speakers x dim`.
    pub means: Array2<f64>,
    pub sigma: f64,
}

impl GaussianSpeakers {
    /// Draws means until every pair is at least `min_separation * sigma`
    /// apart (Euclidean).
    pub fn new(n_speakers: usize, dim: usize, sigma: f64, min_separation: f64, seed: u64) -> Result<Self> {
        if n_speakers == 0 || dim == 0 || !(sigma > 0.0) {
            return Err(Error::invalid("need at least one speaker, one dimension and sigma > 0"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // typical pairwise distance is spread * sqrt(2 * dim)
        let spread = (min_separation * sigma / (dim as f64).sqrt()).max(sigma) * 1.5;
        let mut means = Array2::zeros((n_speakers, dim));
        let mut filled = 0;
        let mut attempts = 0;
        while filled < n_speakers {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::invalid("could not place speaker means far enough apart"));
            }
            let cand: Vec<f64> = (0..dim).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); spread * z }).collect();
            let ok = (0..filled).all(|j| {
                let d2: f64 = means.row(j).iter().zip(&cand).map(|(a, b): (&f64, &f64)| (a - b).powi(2)).sum();
                d2.sqrt() >= min_separation * sigma
            });
            if ok {
                means.row_mut(filled).assign(&ndarray::Array1::from(cand));
                filled += 1;
            }
        }
        Ok(Self { means, sigma })
    }

    pub fn n_speakers(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// Smallest pairwise mean distance in units of sigma.
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.n_speakers() {
            for j in i + 1..self.n_speakers() {
                let d = (&self.means.row(i) - &self.means.row(j)).mapv(|v| v * v).sum().sqrt();
                best = best.min(d / self.sigma);
            }
        }
        best
    }

    pub fn frames<R: Rng>(&self, speaker: usize, n_frames: usize, rng: &mut R) -> Array2<f32> {
        let mean = self.means.row(speaker);
        Array2::from_shape_fn((n_frames, self.dim()), |(_, d)| {
            let z: f64 = StandardNormal.sample(rng);
            (mean[d] + self.sigma * z) as f32
        })
    }
}

/// One synthetic utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUtterance {
    pub utt_id: String,
    pub speaker: usize,
    pub features: Array2<f32>,
}

/// `per_speaker` utterances for each entry of `speakers`, lengths uniform
/// in `frames`.
pub fn utterances(
    model: &GaussianSpeakers,
    speakers: &[usize],
    per_speaker: usize,
    frames: std::ops::RangeInclusive<usize>,
    seed: u64,
) -> Vec<SyntheticUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &s in speakers {
        for k in 0..per_speaker {
            let n = rng.random_range(frames.clone());
            out.push(SyntheticUtterance {
                utt_id: format!("spk{s:03}-utt{k:03}"),
                speaker: s,
                features: model.frames(s, n, &mut rng),
            });
        }
    }
    out
}
