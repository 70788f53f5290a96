//! Speaker verification (trials, cosine scoring, EER) and diarization
//! (windowing, AHC, DER).

mod ahc;
mod der;
mod diarize;
mod eer;
mod timeline;
mod trials;

use std::collections::BTreeSet;
use std::path::Path;

pub use ahc::{ahc_cluster, SimilarityMatrix};
pub use der::{compute_der, optimal_mapping, DerBreakdown, DerConfig, DerMode, Scope};
pub use diarize::{diarization_windows, diarize, diarize_embeddings, window_features, DiarizeConfig, Window};
pub use eer::{compute_eer, EerResult};
pub use timeline::{format_rttm, parse_rttm, read_rttm, window_timeline, write_rttm, Segment, Timeline};
pub use trials::{
    cosine_score, format_trials, make_trials, read_scores, read_trials, score_trials, write_scores, write_trials,
    Trial,
};

use crate::error::{Error, Result};

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One speaker id per line; blank lines and `#` comments are ignored.
pub fn read_speaker_list(path: impl AsRef<Path>) -> Result<BTreeSet<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

pub fn write_speaker_list<'a>(path: impl AsRef<Path>, speakers: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut text = String::new();
    for s in speakers {
        text.push_str(s);
        text.push('\n');
    }
    write_text(path.as_ref(), &text)
}
