use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{
    build_gender_vocab, build_nationality_vocab, make_age_binner, read_features, shuffle_labels,
    AgeBinner, LabelVocab, Manifest, UtteranceRecord,
};
use crate::error::{Error, Result};
use crate::losses::{Batch, LabelSource, MultiTaskConfig};

/// Label spaces derived from a training manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub speaker: LabelVocab,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<AgeBinner>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nationality: Option<LabelVocab>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<LabelVocab>,
}

impl Vocabularies {
    /// Builds only the vocabularies the task configuration needs. Fails if a
    /// task's attribute is absent from every record.
    pub fn build(manifest: &Manifest, mtl: &MultiTaskConfig) -> Result<Self> {
        if manifest.is_empty() {
            return Err(Error::data("training manifest is empty"));
        }
        let mut v = Vocabularies {
            speaker: LabelVocab::speakers(manifest),
            age: None,
            nationality: None,
            gender: None,
        };
        if mtl.uses_source(LabelSource::Age) {
            let ages: Vec<f64> = manifest.records.iter().filter_map(|r| r.attributes.age).collect();
            if ages.is_empty() {
                return Err(Error::data("an age task is configured but no record has an age"));
            }
            v.age = Some(make_age_binner(&ages, mtl.age_bins)?);
        }
        if mtl.uses_source(LabelSource::Nationality) {
            if manifest.records.iter().all(|r| r.attributes.nationality.is_none()) {
                return Err(Error::data("a nationality task is configured but no record has a nationality"));
            }
            v.nationality = Some(build_nationality_vocab(manifest, mtl.nationality_min_count)?);
        }
        if mtl.uses_source(LabelSource::Gender) {
            let g = build_gender_vocab(manifest);
            if g.size() == 0 {
                return Err(Error::data("a gender task is configured but no record has a gender"));
            }
            v.gender = Some(g);
        }
        Ok(v)
    }

    pub fn num_classes(&self, source: LabelSource) -> Result<usize> {
        let n = match source {
            LabelSource::Speaker => Some(self.speaker.size()),
            LabelSource::Age => self.age.as_ref().map(AgeBinner::n_bins),
            LabelSource::Nationality => self.nationality.as_ref().map(LabelVocab::size),
            LabelSource::Gender => self.gender.as_ref().map(LabelVocab::size),
        };
        n.ok_or_else(|| Error::invalid(format!("no {source} vocabulary was built")))
    }

    /// Class index of `record` for `source`, `None` when unlabelled.
    pub fn label(&self, record: &UtteranceRecord, source: LabelSource) -> Option<usize> {
        let a = &record.attributes;
        match source {
            LabelSource::Speaker => self.speaker.encode(&record.speaker_id),
            LabelSource::Age => self.age.as_ref().zip(a.age).map(|(b, age)| b.bin(age)),
            LabelSource::Nationality => self.nationality.as_ref()?.encode_opt(a.nationality.as_deref()),
            LabelSource::Gender => self.gender.as_ref()?.encode(a.gender.as_deref()?),
        }
    }
}

/// Features held in memory with one label column per task.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    pub utt_ids: Vec<String>,
    pub features: Vec<Array2<f32>>,
    /// `labels[task][utterance]`.
    pub labels: Vec<Vec<Option<usize>>>,
}

fn task_seed(seed: u64, task: &str) -> u64 {
    task.bytes().fold(seed ^ 0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3))
}

impl LabeledCorpus {
    pub fn new(utt_ids: Vec<String>, features: Vec<Array2<f32>>, labels: Vec<Vec<Option<usize>>>) -> Result<Self> {
        if utt_ids.len() != features.len() || labels.iter().any(|c| c.len() != features.len()) {
            return Err(Error::invalid("corpus columns have different lengths"));
        }
        if let Some(first) = features.first() {
            let d = first.ncols();
            if let Some((i, _)) = features.iter().enumerate().find(|(_, f)| f.ncols() != d || f.nrows() == 0) {
                return Err(Error::data(format!(
                    "utterance {:?} is empty or has a feature dimension other than {d}",
                    utt_ids[i]
                )));
            }
        }
        Ok(Self { utt_ids, features, labels })
    }

    /// Reads every utterance's features and labels it for each task.
    /// Utterances without a primary-task label are dropped; tasks marked
    /// `shuffle` get a seeded permutation of their labelled entries.
    pub fn from_manifest(manifest: &Manifest, vocab: &Vocabularies, mtl: &MultiTaskConfig, seed: u64) -> Result<Self> {
        let primary = mtl.primary.label_source;
        let kept: Vec<&UtteranceRecord> =
            manifest.records.iter().filter(|r| vocab.label(r, primary).is_some()).collect();
        if kept.is_empty() {
            return Err(Error::data(format!("no utterance has a {primary} label")));
        }
        if kept.len() < manifest.len() {
            log::warn!("dropping {} utterances without a {primary} label", manifest.len() - kept.len());
        }
        let features = kept
            .par_iter()
            .map(|r| read_features(&r.feature_path).map(|f| f.into_inner()))
            .collect::<Result<Vec<_>>>()?;
        let mut labels = Vec::new();
        for task in mtl.all_tasks() {
            let mut col: Vec<Option<usize>> = kept.iter().map(|r| vocab.label(r, task.label_source)).collect();
            if task.shuffle {
                let values: Vec<usize> = col.iter().flatten().copied().collect();
                let mut shuffled = shuffle_labels(&values, task_seed(seed, &task.task_name)).into_iter();
                for slot in col.iter_mut().filter(|c| c.is_some()) {
                    *slot = shuffled.next();
                }
            }
            labels.push(col);
        }
        Self::new(kept.iter().map(|r| r.utt_id.clone()).collect(), features, labels)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.features.first().map(Array2::ncols)
    }

    pub fn num_tasks(&self) -> usize {
        self.labels.len()
    }
}

/// `len` consecutive frames from `start`, wrapping to the beginning.
pub fn wrap_chunk(features: &Array2<f32>, start: usize, len: usize) -> Array2<f32> {
    let n = features.nrows();
    let mut out = Array2::zeros((len, features.ncols()));
    for (t, mut row) in out.rows_mut().into_iter().enumerate() {
        row.assign(&features.row((start + t) % n));
    }
    out
}

/// `batch_size` chunks of `chunk_frames` frames from utterances drawn
/// uniformly with replacement. Long utterances get a uniform start offset;
/// short ones start at 0 and wrap.
pub fn sample_batch<R: Rng>(corpus: &LabeledCorpus, batch_size: usize, chunk_frames: usize, rng: &mut R) -> Result<Batch<f32>> {
    if corpus.is_empty() {
        return Err(Error::data("cannot sample from an empty corpus"));
    }
    if batch_size == 0 || chunk_frames == 0 {
        return Err(Error::invalid("batch_size and chunk_frames must be positive"));
    }
    let mut features = Vec::with_capacity(batch_size);
    let mut labels = vec![Vec::with_capacity(batch_size); corpus.num_tasks()];
    for _ in 0..batch_size {
        let u = rng.random_range(0..corpus.len());
        let x = &corpus.features[u];
        let start = if x.nrows() > chunk_frames {
            rng.random_range(0..=x.nrows() - chunk_frames)
        } else {
            0
        };
        features.push(wrap_chunk(x, start, chunk_frames));
        for (col, src) in labels.iter_mut().zip(&corpus.labels) {
            col.push(src[u]);
        }
    }
    Ok(Batch { features, labels })
}

/// Utterance-level holdout of `fraction` (at least one utterance when the
/// manifest has two or more).
pub fn holdout_validation(manifest: &Manifest, fraction: f64, seed: u64) -> Result<(Manifest, Manifest)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!("holdout fraction {fraction} not in [0, 1)")));
    }
    let n = manifest.len();
    let mut n_valid = (fraction * n as f64).round() as usize;
    if n >= 2 && fraction > 0.0 {
        n_valid = n_valid.clamp(1, n - 1);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut is_valid = vec![false; n];
    for &i in &order[..n_valid] {
        is_valid[i] = true;
    }
    let (mut tr, mut va) = (Vec::new(), Vec::new());
    for (r, v) in manifest.records.iter().zip(is_valid) {
        if v { va.push(r.clone()) } else { tr.push(r.clone()) }
    }
    Ok((
        Manifest::new(tr, format!("{} [train part]", manifest.provenance))?,
        Manifest::new(va, format!("{} [validation part]", manifest.provenance))?,
    ))
}
