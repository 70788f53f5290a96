//! Label vocabularies, age binning, and random-label controls.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::Manifest;
use crate::error::{Error, Result};

pub const UNK_LABEL: &str = "UNK";

/// Bijection between label strings and contiguous class indices `0..size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct LabelVocab {
    name: String,
    labels: Vec<String>,
    index_of: HashMap<String, usize>,
    unk: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    name: String,
    labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    unk: Option<String>,
}

impl From<VocabRepr> for LabelVocab {
    fn from(r: VocabRepr) -> Self {
        let mut v = LabelVocab::from_labels(r.name, r.labels);
        v.unk = r.unk.and_then(|u| v.index_of.get(&u).copied());
        v
    }
}

impl From<LabelVocab> for VocabRepr {
    fn from(v: LabelVocab) -> Self {
        let unk = v.unk.map(|i| v.labels[i].clone());
        VocabRepr {
            name: v.name,
            labels: v.labels,
            unk,
        }
    }
}

impl LabelVocab {
    /// Indices follow the order of `labels`; duplicates keep the first index.
    pub fn from_labels(name: impl Into<String>, labels: impl IntoIterator<Item = String>) -> Self {
        let mut out = Vec::new();
        let mut index_of = HashMap::new();
        for l in labels {
            if !index_of.contains_key(&l) {
                index_of.insert(l.clone(), out.len());
                out.push(l);
            }
        }
        Self {
            name: name.into(),
            labels: out,
            index_of,
            unk: None,
        }
    }

    /// Sorted vocabulary of every speaker in the manifest.
    pub fn speakers(manifest: &Manifest) -> Self {
        let set: BTreeSet<String> = manifest.records.iter().map(|r| r.speaker_id.clone()).collect();
        Self::from_labels("speaker", set)
    }

    /// Classes ordered by descending count, ties lexicographic. Labels with
    /// fewer than `min_count` occurrences (and `None`) collapse into `UNK`,
    /// which is appended last when anything maps to it.
    pub fn from_counts(
        name: impl Into<String>,
        counts: &BTreeMap<Option<String>, usize>,
        min_count: usize,
    ) -> Self {
        let mut kept: Vec<(&String, usize)> = Vec::new();
        let mut needs_unk = false;
        for (label, &n) in counts {
            match label {
                Some(l) if n >= min_count && l != UNK_LABEL => kept.push((l, n)),
                _ => needs_unk |= n > 0,
            }
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut labels: Vec<String> = kept.into_iter().map(|(l, _)| l.clone()).collect();
        if needs_unk {
            labels.push(UNK_LABEL.to_string());
        }
        let mut v = Self::from_labels(name, labels);
        if needs_unk {
            v.unk = Some(v.size() - 1);
        }
        v
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn unk_index(&self) -> Option<usize> {
        self.unk
    }

    /// Unknown labels fall back to the UNK class when the vocabulary has one.
    pub fn encode(&self, label: &str) -> Option<usize> {
        self.index_of.get(label).copied().or(self.unk)
    }

    /// Encodes an optional label; `None` maps to UNK if present.
    pub fn encode_opt(&self, label: Option<&str>) -> Option<usize> {
        match label {
            Some(l) => self.encode(l),
            None => self.unk,
        }
    }

    pub fn decode(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }
}

/// Per-speaker attribute value: the first non-missing value across that
/// speaker's records.
fn speaker_attribute<'a>(
    manifest: &'a Manifest,
    get: impl Fn(&'a super::UtteranceRecord) -> Option<&'a str>,
) -> BTreeMap<&'a str, Option<&'a str>> {
    let mut out: BTreeMap<&str, Option<&str>> = BTreeMap::new();
    for r in &manifest.records {
        let slot = out.entry(r.speaker_id.as_str()).or_insert(None);
        if slot.is_none() {
            *slot = get(r);
        }
    }
    out
}

fn speaker_counts<'a>(
    manifest: &'a Manifest,
    get: impl Fn(&'a super::UtteranceRecord) -> Option<&'a str>,
) -> BTreeMap<Option<String>, usize> {
    let mut counts = BTreeMap::new();
    for value in speaker_attribute(manifest, get).into_values() {
        *counts.entry(value.map(str::to_string)).or_insert(0) += 1;
    }
    counts
}

/// Nationalities held by fewer than `min_count` speakers share the UNK class
/// with speakers whose nationality is missing.
pub fn build_nationality_vocab(manifest: &Manifest, min_count: usize) -> Result<LabelVocab> {
    if min_count < 2 {
        return Err(Error::invalid(format!(
            "nationality min_count must be >= 2, got {min_count}"
        )));
    }
    let counts = speaker_counts(manifest, |r| r.attributes.nationality.as_deref());
    Ok(LabelVocab::from_counts("nationality", &counts, min_count))
}

/// Gender classes by descending speaker count; no UNK class.
pub fn build_gender_vocab(manifest: &Manifest) -> LabelVocab {
    let mut counts = speaker_counts(manifest, |r| r.attributes.gender.as_deref());
    counts.remove(&None);
    LabelVocab::from_counts("gender", &counts, 1)
}

/// Uniformly spaced age bins between `lo` and `hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeBinner {
    n_bins: usize,
    lo: f64,
    hi: f64,
    edges: Vec<f64>,
}

impl AgeBinner {
    pub fn new(lo: f64, hi: f64, n_bins: usize) -> Result<Self> {
        if n_bins < 1 {
            return Err(Error::invalid("n_bins must be >= 1"));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::invalid(format!("invalid age range [{lo}, {hi}]")));
        }
        let width = hi - lo;
        let mut edges: Vec<f64> = (0..=n_bins)
            .map(|i| lo + width * i as f64 / n_bins as f64)
            .collect();
        edges[n_bins] = hi;
        Ok(Self {
            n_bins,
            lo,
            hi,
            edges,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Index `i` with `edges[i] <= age < edges[i+1]`, clamped to the edge bins.
    pub fn bin(&self, age: f64) -> usize {
        let interior = &self.edges[1..self.n_bins];
        interior.partition_point(|&e| e <= age)
    }

    pub fn histogram<I: IntoIterator<Item = f64>>(&self, ages: I) -> Vec<usize> {
        let mut h = vec![0; self.n_bins];
        for a in ages {
            h[self.bin(a)] += 1;
        }
        h
    }
}

/// Spans the observed ages. A degenerate range widens to ±0.5 years.
pub fn make_age_binner(ages: &[f64], n_bins: usize) -> Result<AgeBinner> {
    if ages.is_empty() {
        return Err(Error::invalid("cannot bin an empty age list"));
    }
    if n_bins < 1 {
        return Err(Error::invalid("n_bins must be >= 1"));
    }
    if let Some(a) = ages.iter().find(|a| !a.is_finite()) {
        return Err(Error::invalid(format!("non-finite age {a}")));
    }
    let lo = ages.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ages.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        AgeBinner::new(lo, hi, n_bins)
    } else {
        AgeBinner::new(lo - 0.5, hi + 0.5, n_bins)
    }
}

pub fn bin_age(binner: &AgeBinner, age: f64) -> usize {
    binner.bin(age)
}

/// Seeded uniform permutation of `labels`.
pub fn shuffle_labels(labels: &[usize], seed: u64) -> Vec<usize> {
    let mut out = labels.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    out.shuffle(&mut rng);
    out
}
