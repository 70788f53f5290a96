//! MFCC extraction: pre-emphasis, Hamming-windowed framing, magnitude FFT,
//! triangular mel filterbank, log, orthonormal DCT-II, and optional
//! per-utterance cepstral mean subtraction.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dataio::FeatureMatrix;
use crate::error::{Error, Result};

pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample_rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * k).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Reads a mono 16-bit PCM WAV file, scaling samples to [-1, 1).
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Format(format!(
            "{}: expected mono 16-bit PCM, found {} channel(s), {} bits, {:?}",
            path.display(),
            spec.channels,
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Waveform::new(samples, spec.sample_rate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct MfccConfig {
    /// Milliseconds.
    pub frame_length: f64,
    /// Milliseconds.
    pub frame_shift: f64,
    pub pre_emphasis: f64,
    pub n_mels: usize,
    pub n_ceps: usize,
    pub fmin: f64,
    /// Defaults to `sample_rate / 2 - 100` when absent.
    pub fmax: Option<f64>,
    pub cmn: bool,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            frame_length: 25.0,
            frame_shift: 10.0,
            pre_emphasis: 0.97,
            n_mels: 30,
            n_ceps: 30,
            fmin: 20.0,
            fmax: None,
            cmn: true,
        }
    }
}

impl MfccConfig {
    pub fn frame_length_samples(&self, sample_rate: u32) -> usize {
        (self.frame_length * 1e-3 * sample_rate as f64).round() as usize
    }

    pub fn frame_shift_samples(&self, sample_rate: u32) -> usize {
        (self.frame_shift * 1e-3 * sample_rate as f64).round() as usize
    }

    pub fn fmax_for(&self, sample_rate: u32) -> f64 {
        self.fmax.unwrap_or(sample_rate as f64 / 2.0 - 100.0)
    }

    fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.n_ceps == 0 || self.n_ceps > self.n_mels {
            return Err(Error::invalid(format!(
                "n_ceps ({}) must be in 1..={}",
                self.n_ceps, self.n_mels
            )));
        }
        if !(self.frame_shift > 0.0 && self.frame_shift <= self.frame_length) {
            return Err(Error::invalid("frame_shift must be in (0, frame_length]"));
        }
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return Err(Error::invalid("pre_emphasis must be in [0, 1)"));
        }
        if self.frame_shift_samples(sample_rate) == 0 {
            return Err(Error::invalid("frame shift rounds to zero samples"));
        }
        Ok(())
    }
}

pub fn pre_emphasize(w: &Waveform, alpha: f64) -> Waveform {
    let x = &w.samples;
    let mut y = Vec::with_capacity(x.len());
    if let Some(&first) = x.first() {
        y.push(first * (1.0 - alpha));
    }
    y.extend(x.windows(2).map(|p| p[1] - alpha * p[0]));
    Waveform {
        samples: y,
        sample_rate: w.sample_rate,
    }
}

pub fn frame_count(n_samples: usize, frame_length: usize, frame_shift: usize) -> usize {
    if n_samples < frame_length || frame_shift == 0 {
        0
    } else {
        (n_samples - frame_length) / frame_shift + 1
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Centre frequencies (Hz) of the `n_mels` triangular filters.
pub fn mel_centers(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    (1..=n_mels)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Height-normalised triangular filters, `n_mels x (n_fft/2 + 1)`.
pub fn mel_filterbank(
    n_fft: usize,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
    sample_rate: u32,
) -> Result<Array2<f64>> {
    if n_mels < 1 {
        return Err(Error::invalid("n_mels must be >= 1"));
    }
    if !(fmin >= 0.0 && fmin < fmax) {
        return Err(Error::invalid(format!("need 0 <= fmin < fmax, got {fmin}, {fmax}")));
    }
    if fmax > sample_rate as f64 / 2.0 {
        return Err(Error::invalid(format!("fmax {fmax} exceeds Nyquist")));
    }
    let n_bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut fb = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb[(m, k)] = w;
        }
        if fb.row(m).iter().all(|&w| w <= 0.0) {
            return Err(Error::invalid(format!(
                "mel filter {m} ({left:.1}-{right:.1} Hz) covers no FFT bin; reduce n_mels or raise n_fft"
            )));
        }
    }
    Ok(fb)
}

/// Orthonormal DCT-II matrix, `n_out x n_in`.
fn dct_matrix(n_out: usize, n_in: usize) -> Array2<f64> {
    let n = n_in as f64;
    Array2::from_shape_fn((n_out, n_in), |(k, i)| {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        scale * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos()
    })
}

pub fn dct_ii(x: &[f64]) -> Vec<f64> {
    dct_matrix(x.len(), x.len())
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

pub fn compute_mfcc(w: &Waveform, cfg: &MfccConfig) -> Result<FeatureMatrix> {
    cfg.validate(w.sample_rate)?;
    let sr = w.sample_rate;
    let win = cfg.frame_length_samples(sr);
    let hop = cfg.frame_shift_samples(sr);
    let n_frames = frame_count(w.len(), win, hop);
    if n_frames == 0 {
        return Err(Error::invalid(format!(
            "waveform of {} samples is shorter than one {win}-sample frame",
            w.len()
        )));
    }
    let n_fft = win.next_power_of_two();
    let fb = mel_filterbank(n_fft, cfg.n_mels, cfg.fmin, cfg.fmax_for(sr), sr)?;
    let dct = dct_matrix(cfg.n_ceps, cfg.n_mels);
    let window = hamming(win);
    let emphasized = pre_emphasize(w, cfg.pre_emphasis);
    let x = emphasized.samples();

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let n_bins = n_fft / 2 + 1;
    let mut mag = ndarray::Array1::<f64>::zeros(n_bins);
    let mut out = Array2::<f64>::zeros((n_frames, cfg.n_ceps));
    for t in 0..n_frames {
        let frame = &x[t * hop..t * hop + win];
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < win {
                Complex::new(frame[i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            mag[k] = buf[k].norm();
        }
        let log_mel = fb.dot(&mag).mapv(|e| e.max(LOG_FLOOR).ln());
        out.row_mut(t).assign(&dct.dot(&log_mel));
    }
    if cfg.cmn {
        let mean = out.mean_axis(ndarray::Axis(0)).expect("at least one frame");
        out -= &mean;
    }
    FeatureMatrix::new(out.mapv(|v| v as f32))
}
