use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::ahc::{ahc_cluster, SimilarityMatrix};
use super::timeline::{region_windows, Segment, Timeline};
use crate::error::{Error, Result};
use crate::model::SpeakerNet;
use crate::real::Real;
use crate::training::wrap_chunk;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiarizeConfig {
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default = "default_hop")]
    pub hop: f64,
    /// Feature frames per second.
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
}

fn default_window() -> f64 {
    1.5
}

fn default_hop() -> f64 {
    0.75
}

fn default_frame_rate() -> f64 {
    100.0
}

impl Default for DiarizeConfig {
    fn default() -> Self {
        Self {
            window: default_window(),
            hop: default_hop(),
            frame_rate: default_frame_rate(),
        }
    }
}

/// A window and the speech region it belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
    pub region: usize,
}

impl Window {
    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

pub fn diarization_windows(sad: &Timeline, config: &DiarizeConfig) -> Vec<Window> {
    sad.speech_regions()
        .iter()
        .enumerate()
        .flat_map(|(r, &(s, e))| {
            region_windows(s, e, config.window, config.hop)
                .into_iter()
                .map(move |(start, end)| Window { start, end, region: r })
        })
        .collect()
}

/// Clusters pre-computed window embeddings and paints the speech regions:
/// each instant takes the label of the nearest window center, then touching
/// same-label pieces merge.
pub fn diarize_embeddings<F: Real>(
    sad: &Timeline,
    windows: &[Window],
    embeddings: ArrayView2<'_, F>,
    k: usize,
) -> Result<Timeline> {
    if windows.is_empty() {
        return Err(Error::data(format!("{}: no speech to diarize", sad.rec_id)));
    }
    if embeddings.nrows() != windows.len() {
        return Err(Error::invalid("one embedding per window is required"));
    }
    let labels = ahc_cluster(&SimilarityMatrix::cosine(embeddings)?, k)?;
    let regions = sad.speech_regions();
    let mut segments: Vec<Segment> = Vec::new();
    let mut i = 0;
    while i < windows.len() {
        let r = windows[i].region;
        let mut j = i;
        while j < windows.len() && windows[j].region == r {
            j += 1;
        }
        let mut order: Vec<usize> = (i..j).collect();
        order.sort_by(|&a, &b| windows[a].center().total_cmp(&windows[b].center()).then(a.cmp(&b)));
        let (rs, re) = regions[r];
        let mut cursor = rs;
        for (n, &w) in order.iter().enumerate() {
            let end = match order.get(n + 1) {
                Some(&next) => 0.5 * (windows[w].center() + windows[next].center()),
                None => re,
            };
            let end = end.clamp(cursor, re);
            if end > cursor {
                let speaker = format!("spk{}", labels[w]);
                match segments.last_mut() {
                    Some(last) if last.speaker == speaker && last.end == cursor => last.end = end,
                    _ => segments.push(Segment::new(cursor, end, speaker)),
                }
            }
            cursor = end;
        }
        i = j;
    }
    Timeline::new(sad.rec_id.clone(), segments)
}

/// Window features for `sad`: frames `[round(start*fps), round(end*fps))`,
/// wrap-padded to `min_frames` when shorter.
pub fn window_features(
    features: ArrayView2<'_, f32>,
    windows: &[Window],
    frame_rate: f64,
    min_frames: usize,
) -> Result<Vec<Array2<f32>>> {
    let n = features.nrows();
    windows
        .iter()
        .map(|w| {
            let a = ((w.start * frame_rate).round() as usize).min(n);
            let b = ((w.end * frame_rate).round() as usize).min(n);
            if b <= a {
                return Err(Error::data(format!(
                    "window [{:.3}, {:.3}] lies outside the {n} feature frames",
                    w.start, w.end
                )));
            }
            let x = features.slice(ndarray::s![a..b, ..]).to_owned();
            Ok(if x.nrows() < min_frames { wrap_chunk(&x, 0, min_frames) } else { x })
        })
        .collect()
}

/// Full pipeline for one recording with oracle speaker count `k`.
pub fn diarize(
    net: &SpeakerNet<f32>,
    features: ArrayView2<'_, f32>,
    sad: &Timeline,
    k: usize,
    config: &DiarizeConfig,
) -> Result<Timeline> {
    let windows = diarization_windows(sad, config);
    if windows.is_empty() {
        return Err(Error::data(format!("{}: no speech to diarize", sad.rec_id)));
    }
    let chunks = window_features(features, &windows, config.frame_rate, net.min_frames())?;
    let views: Vec<_> = chunks.iter().map(|c| c.view()).collect();
    let emb = net.embed_batch(&views)?;
    diarize_embeddings(sad, &windows, emb.view(), k)
}
