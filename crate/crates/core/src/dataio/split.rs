//! Recording-level train/test split with age-histogram balancing.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::labels::AgeBinner;
use super::manifest::{Manifest, UtteranceRecord};
use crate::error::{Error, Result};

/// Allowed deviation of the train utterance fraction from the target.
pub const TRAIN_FRACTION_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Serialize)]
pub struct SplitReport {
    pub train_fraction: f64,
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub train_recordings: usize,
    pub test_recordings: usize,
    pub train_age_histogram: Vec<usize>,
    pub test_age_histogram: Vec<usize>,
    pub age_l1_distance: f64,
}

/// L1 distance between two histograms after normalising each to unit mass.
/// An empty histogram is maximally distant from anything.
pub fn normalized_l1(a: &[usize], b: &[usize]) -> f64 {
    let sa: usize = a.iter().sum();
    let sb: usize = b.iter().sum();
    if sa == 0 || sb == 0 {
        return if sa == sb { 0.0 } else { 2.0 };
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 / sa as f64 - y as f64 / sb as f64).abs())
        .sum()
}

pub fn age_histogram<'a>(
    records: impl IntoIterator<Item = &'a UtteranceRecord>,
    binner: &AgeBinner,
) -> Vec<usize> {
    binner.histogram(records.into_iter().filter_map(|r| r.attributes.age))
}

struct Recording {
    records: Vec<usize>,
    hist: Vec<usize>,
}

fn add(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Splits whole recordings between train and test.
///
/// Recordings are visited largest first (seeded tie order). Each goes to the
/// side that keeps both sides within their utterance budget
/// (`train_frac ± TRAIN_FRACTION_TOLERANCE`); when both sides fit, the one
/// giving the lower age-histogram L1 distance wins, then the less filled side.
pub fn split_train_test(
    manifest: &Manifest,
    train_frac: f64,
    binner: &AgeBinner,
    seed: u64,
) -> Result<(Manifest, Manifest)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::invalid(format!(
            "train_frac must lie in (0, 1), got {train_frac}"
        )));
    }
    let mut by_rec: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        by_rec.entry(r.rec_id.as_str()).or_default().push(i);
    }
    if by_rec.len() < 2 {
        return Err(Error::data(format!(
            "need at least 2 recordings to split, found {}",
            by_rec.len()
        )));
    }
    let mut recs: Vec<Recording> = by_rec
        .into_values()
        .map(|idx| Recording {
            hist: age_histogram(idx.iter().map(|&i| &manifest.records[i]), binner),
            records: idx,
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    recs.shuffle(&mut rng);
    recs.sort_by(|a, b| b.records.len().cmp(&a.records.len()));

    let total = manifest.len() as f64;
    let train_cap = (train_frac + TRAIN_FRACTION_TOLERANCE) * total + 1e-9;
    let test_cap = (1.0 - train_frac + TRAIN_FRACTION_TOLERANCE) * total + 1e-9;
    let train_target = train_frac * total;
    let test_target = (1.0 - train_frac) * total;

    let nb = binner.n_bins();
    let (mut train_n, mut test_n) = (0usize, 0usize);
    let (mut train_h, mut test_h) = (vec![0; nb], vec![0; nb]);
    let mut in_train = vec![false; recs.len()];

    for (ri, rec) in recs.iter().enumerate() {
        let n = rec.records.len();
        let fits_train = (train_n + n) as f64 <= train_cap;
        let fits_test = (test_n + n) as f64 <= test_cap;
        let fill_train = train_n as f64 / train_target;
        let fill_test = test_n as f64 / test_target;
        let to_train = match (fits_train, fits_test) {
            (true, false) => true,
            (false, true) => false,
            (false, false) => fill_train <= fill_test,
            (true, true) => {
                let d_train = normalized_l1(&add(&train_h, &rec.hist), &test_h);
                let d_test = normalized_l1(&train_h, &add(&test_h, &rec.hist));
                if (d_train - d_test).abs() > 1e-12 {
                    d_train < d_test
                } else {
                    fill_train <= fill_test
                }
            }
        };
        if to_train {
            train_n += n;
            train_h = add(&train_h, &rec.hist);
        } else {
            test_n += n;
            test_h = add(&test_h, &rec.hist);
        }
        in_train[ri] = to_train;
    }

    let mut side = vec![false; manifest.len()];
    for (rec, &t) in recs.iter().zip(&in_train) {
        for &i in &rec.records {
            side[i] = t;
        }
    }
    let pick = |want: bool| -> Vec<UtteranceRecord> {
        manifest
            .records
            .iter()
            .zip(&side)
            .filter(|(_, &s)| s == want)
            .map(|(r, _)| r.clone())
            .collect()
    };
    let train = Manifest {
        records: pick(true),
        provenance: format!("{} [train split]", manifest.provenance),
    };
    let test = Manifest {
        records: pick(false),
        provenance: format!("{} [test split]", manifest.provenance),
    };
    Ok((train, test))
}

pub fn split_report(train: &Manifest, test: &Manifest, binner: &AgeBinner) -> SplitReport {
    let train_age_histogram = age_histogram(&train.records, binner);
    let test_age_histogram = age_histogram(&test.records, binner);
    let total = train.len() + test.len();
    SplitReport {
        train_fraction: if total == 0 { 0.0 } else { train.len() as f64 / total as f64 },
        train_utterances: train.len(),
        test_utterances: test.len(),
        train_recordings: train.recordings().len(),
        test_recordings: test.recordings().len(),
        age_l1_distance: normalized_l1(&train_age_histogram, &test_age_histogram),
        train_age_histogram,
        test_age_histogram,
    }
}
