use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use mtlspk::dataio::{load_manifest, read_features};
use mtlspk::evaluation::{
    compute_der, diarize, read_rttm, read_speaker_list, write_rttm, DerBreakdown, DerConfig, DiarizeConfig, Scope,
    Timeline,
};
use mtlspk::model::Checkpoint;
use rayon::prelude::*;
use serde::Serialize;

use super::features::file_stem;
use super::{require_file, write_json};
use crate::config::load_section;
use crate::error::{CliError, CliResult};
use crate::Globals;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Reference RTTM.
    #[arg(long)]
    pub reference: PathBuf,
    /// Speech activity as RTTM; defaults to the reference (oracle SAD).
    #[arg(long)]
    pub sad: Option<PathBuf>,
    /// Directory of whole-recording features, `<rec_id>.feat`.
    #[arg(long)]
    pub features: PathBuf,
    /// `rec_id k` per line: the oracle number of speakers.
    #[arg(long)]
    pub k_table: PathBuf,
    /// Speakers scored in the "unseen" mode.
    #[arg(long)]
    pub unseen: Option<PathBuf>,
    /// Alternatively: every reference speaker absent from this manifest is unseen.
    #[arg(long, conflicts_with = "unseen")]
    pub train_manifest: Option<PathBuf>,
    /// Seconds forgiven around reference boundaries.
    #[arg(long, default_value_t = 0.0)]
    pub collar: f64,
    #[arg(long)]
    pub skip_overlap: bool,
}

pub fn read_k_table(path: &Path) -> CliResult<BTreeMap<String, usize>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || CliError::data(format!("{}:{}: expected `rec_id k`", path.display(), i + 1));
        let mut it = line.split_whitespace();
        let (Some(rec), Some(k), None) = (it.next(), it.next(), it.next()) else { return Err(bad()) };
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(CliError::data(format!("{}:{}: k must be positive", path.display(), i + 1)));
        }
        if out.insert(rec.to_string(), k).is_some() {
            return Err(CliError::data(format!("{}:{}: duplicate recording {rec:?}", path.display(), i + 1)));
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct RecordingReport {
    k: usize,
    all: DerBreakdown,
    /// Absent when no unseen speaker talks in the recording.
    unseen: Option<DerBreakdown>,
}

#[derive(Serialize)]
struct Report {
    collar: f64,
    skip_overlap: bool,
    n_unseen_speakers: usize,
    aggregate: BTreeMap<&'static str, Option<DerBreakdown>>,
    recordings: BTreeMap<String, RecordingReport>,
}

pub fn run(g: &Globals, a: &Args) -> CliResult<()> {
    for (p, what) in [(&a.checkpoint, "checkpoint"), (&a.reference, "reference RTTM"), (&a.k_table, "k table")] {
        require_file(p, what)?;
    }
    if !a.features.is_dir() {
        return Err(CliError::data(format!("feature directory {} does not exist", a.features.display())));
    }
    if !(a.collar >= 0.0) {
        return Err(CliError::config("--collar must be non-negative"));
    }
    let cfg: DiarizeConfig = load_section(g.config.as_deref(), "diarize")?;
    let reference = read_rttm(&a.reference)?;
    let sad = match &a.sad {
        Some(p) => {
            require_file(p, "SAD RTTM")?;
            read_rttm(p)?
        }
        None => reference.clone(),
    };
    let ks = read_k_table(&a.k_table)?;
    let unseen: BTreeSet<String> = match (&a.unseen, &a.train_manifest) {
        (Some(p), _) => {
            require_file(p, "unseen speaker list")?;
            read_speaker_list(p)?
        }
        (None, Some(p)) => {
            require_file(p, "train manifest")?;
            let m = load_manifest(p)?;
            let seen = m.speakers();
            reference
                .values()
                .flat_map(|t| t.speakers())
                .filter(|s| !seen.contains(s))
                .map(String::from)
                .collect()
        }
        (None, None) => {
            return Err(CliError::config("the unseen speakers are required (--unseen or --train-manifest)"));
        }
    };
    for rec in ks.keys() {
        if !reference.contains_key(rec) {
            return Err(CliError::data(format!("recording {rec:?} from the k table has no reference")));
        }
        if !sad.contains_key(rec) {
            return Err(CliError::data(format!("recording {rec:?} has no speech activity")));
        }
    }
    let out = g.prepare_out("der.json")?;
    let net = Checkpoint::load(&a.checkpoint)?.to_net()?;
    let der_cfg = DerConfig { collar: a.collar, skip_overlap: a.skip_overlap };

    let recs: Vec<(&String, &usize)> = ks.iter().collect();
    let results: Vec<(Timeline, RecordingReport)> = recs
        .par_iter()
        .map(|&(rec, &k)| -> CliResult<(Timeline, RecordingReport)> {
            let path = a.features.join(format!("{}.feat", file_stem(rec)));
            require_file(&path, "recording features")?;
            let x = read_features(&path)?;
            let hyp = diarize(&net, x.view(), &sad[rec], k, &cfg)?;
            let r = &reference[rec];
            let all = compute_der(r, &hyp, Scope::All, &der_cfg)?;
            let has_unseen = r.speakers().iter().any(|s| unseen.contains(*s));
            let unseen = if has_unseen { Some(compute_der(r, &hyp, Scope::Unseen(&unseen), &der_cfg)?) } else { None };
            Ok((hyp, RecordingReport { k, all, unseen }))
        })
        .collect::<CliResult<_>>()?;

    let all: Vec<DerBreakdown> = results.iter().map(|(_, r)| r.all).collect();
    let uns: Vec<DerBreakdown> = results.iter().filter_map(|(_, r)| r.unseen).collect();
    let mut aggregate = BTreeMap::new();
    aggregate.insert("all", (!all.is_empty()).then(|| DerBreakdown::pooled(&all)).transpose()?);
    aggregate.insert("unseen", (!uns.is_empty()).then(|| DerBreakdown::pooled(&uns)).transpose()?);
    write_rttm(out.join("hyp.rttm"), results.iter().map(|(t, _)| t))?;
    let report = Report {
        collar: a.collar,
        skip_overlap: a.skip_overlap,
        n_unseen_speakers: unseen.len(),
        aggregate,
        recordings: results.into_iter().map(|(t, r)| (t.rec_id, r)).collect(),
    };
    write_json(&out.join("der.json"), &report)?;
    Ok(())
}
