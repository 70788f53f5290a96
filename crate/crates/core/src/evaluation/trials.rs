use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::{Manifest, UtteranceRecord};
use crate::error::{Error, Result};
use crate::model::{Embedding, NORM_FLOOR};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Trial {
    pub enrol_utt: String,
    pub test_utt: String,
    pub target: bool,
}

/// Per unseen speaker: up to `n_per_speaker` distinct same-speaker pairs and
/// the same number of pairs against other unseen speakers' utterances.
/// Nontarget pairs avoid sharing a recording when possible.
pub fn make_trials(
    test: &Manifest,
    train_speakers: &BTreeSet<String>,
    n_per_speaker: usize,
    seed: u64,
) -> Result<Vec<Trial>> {
    let mut by_speaker: BTreeMap<&str, Vec<&UtteranceRecord>> = BTreeMap::new();
    for r in &test.records {
        if !train_speakers.contains(&r.speaker_id) {
            by_speaker.entry(&r.speaker_id).or_default().push(r);
        }
    }
    for utts in by_speaker.values_mut() {
        utts.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    }
    let usable = by_speaker.values().filter(|u| u.len() >= 2).count();
    if usable < 2 {
        return Err(Error::data(format!(
            "need at least 2 unseen speakers with 2+ utterances for trials, found {usable}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::new();
    for (&spk, utts) in &by_speaker {
        if utts.len() < 2 {
            log::warn!("speaker {spk} has a single test utterance and gets no trials");
            continue;
        }
        let mut pairs = Vec::new();
        for i in 0..utts.len() {
            for j in i + 1..utts.len() {
                pairs.push((i, j));
            }
        }
        let targets: Vec<(usize, usize)> = pairs.choose_multiple(&mut rng, n_per_speaker.min(pairs.len())).copied().collect();
        for &(i, j) in &targets {
            trials.push(Trial {
                enrol_utt: utts[i].utt_id.clone(),
                test_utt: utts[j].utt_id.clone(),
                target: true,
            });
        }
        let others: Vec<&UtteranceRecord> =
            by_speaker.iter().filter(|(s, _)| **s != spk).flat_map(|(_, u)| u.iter().copied()).collect();
        trials.extend(nontargets(utts, &others, targets.len(), spk, &mut rng));
    }
    Ok(trials)
}

fn nontargets<R: Rng>(own: &[&UtteranceRecord], others: &[&UtteranceRecord], count: usize, spk: &str, rng: &mut R) -> Vec<Trial> {
    let mut chosen: Vec<(usize, usize)> = Vec::with_capacity(count);
    let mut seen = HashSet::new();
    let budget = 200 * count.max(1);
    for _ in 0..budget {
        if chosen.len() == count {
            break;
        }
        let e = rng.random_range(0..own.len());
        let t = rng.random_range(0..others.len());
        if own[e].rec_id != others[t].rec_id && seen.insert((e, t)) {
            chosen.push((e, t));
        }
    }
    if chosen.len() < count {
        // exhaust the cross-recording pairs first, then allow shared recordings
        let mut rest: Vec<(usize, usize)> = (0..own.len())
            .flat_map(|e| (0..others.len()).map(move |t| (e, t)))
            .filter(|p| !seen.contains(p))
            .collect();
        rest.shuffle(rng);
        rest.sort_by_key(|&(e, t)| own[e].rec_id == others[t].rec_id);
        for p in rest.into_iter().take(count - chosen.len()) {
            if own[p.0].rec_id == others[p.1].rec_id {
                log::warn!("speaker {spk}: nontarget trial shares a recording");
            }
            chosen.push(p);
        }
    }
    chosen
        .into_iter()
        .map(|(e, t)| Trial {
            enrol_utt: own[e].utt_id.clone(),
            test_utt: others[t].utt_id.clone(),
            target: false,
        })
        .collect()
}

/// Cosine similarity; errors when either norm is below the floor.
pub fn cosine_score<F: Real>(a: &Embedding<F>, b: &Embedding<F>) -> Result<f64> {
    cosine(&a.to_f64(), &b.to_f64())
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("embedding dimensions differ: {} vs {}", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        return Err(Error::invalid("cannot score a zero-norm embedding"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Scores every trial; all referenced utterances must have embeddings.
pub fn score_trials<F: Real>(embeddings: &HashMap<String, Embedding<F>>, trials: &[Trial]) -> Result<Vec<f64>> {
    let get = |u: &str| {
        embeddings
            .get(u)
            .ok_or_else(|| Error::data(format!("no embedding for utterance {u:?}")))
    };
    trials.iter().map(|t| cosine_score(get(&t.enrol_utt)?, get(&t.test_utt)?)).collect()
}

fn kind(target: bool) -> &'static str {
    if target { "tgt" } else { "non" }
}

fn parse_line(path: &Path, no: usize, line: &str, with_score: bool) -> Result<(Trial, Option<f64>)> {
    let bad = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: no,
        message,
    };
    let cols: Vec<&str> = line.split_whitespace().collect();
    let want = if with_score { 4 } else { 3 };
    if cols.len() != want {
        return Err(bad(format!("expected {want} columns, found {}", cols.len())));
    }
    let target = match cols[0] {
        "tgt" => true,
        "non" => false,
        other => return Err(bad(format!("trial kind must be tgt or non, got {other:?}"))),
    };
    if cols[1] == cols[2] {
        return Err(bad("enrolment and test utterance are the same".into()));
    }
    let score = if with_score {
        let s: f64 = cols[3].parse().map_err(|_| bad(format!("bad score {:?}", cols[3])))?;
        if !s.is_finite() {
            return Err(bad("non-finite score".into()));
        }
        Some(s)
    } else {
        None
    };
    Ok((
        Trial {
            enrol_utt: cols[1].into(),
            test_utt: cols[2].into(),
            target,
        },
        score,
    ))
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

/// Lines of the form `tgt|non enrol_utt test_utt`.
pub fn read_trials(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    let path = path.as_ref();
    read_lines(path)?
        .iter()
        .map(|(no, l)| parse_line(path, *no, l, false).map(|t| t.0))
        .collect()
}

pub fn format_trials(trials: &[Trial]) -> String {
    let mut s = String::new();
    for t in trials {
        let _ = writeln!(s, "{} {} {}", kind(t.target), t.enrol_utt, t.test_utt);
    }
    s
}

pub fn write_trials(path: impl AsRef<Path>, trials: &[Trial]) -> Result<()> {
    super::write_text(path.as_ref(), &format_trials(trials))
}

/// Trial lines with a fourth score column.
pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<(Trial, f64)>> {
    let path = path.as_ref();
    read_lines(path)?
        .iter()
        .map(|(no, l)| parse_line(path, *no, l, true).map(|(t, s)| (t, s.expect("score column"))))
        .collect()
}

pub fn write_scores(path: impl AsRef<Path>, trials: &[Trial], scores: &[f64]) -> Result<()> {
    if trials.len() != scores.len() {
        return Err(Error::invalid("trial and score counts differ"));
    }
    let mut s = String::new();
    for (t, v) in trials.iter().zip(scores) {
        let _ = writeln!(s, "{} {} {} {v:.6}", kind(t.target), t.enrol_utt, t.test_utt);
    }
    super::write_text(path.as_ref(), &s)
}
