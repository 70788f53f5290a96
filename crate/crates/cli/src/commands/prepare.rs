use std::collections::BTreeSet;
use std::path::PathBuf;

use mtlspk::dataio::{
    apply_attributes, build_gender_vocab, build_nationality_vocab, load_manifest, make_age_binner, read_attribute_csv,
    save_manifest, split_report, split_train_test, AgeBinner, LabelVocab,
};
use mtlspk::evaluation::write_speaker_list;
use serde::Serialize;

use super::{require_file, write_json};
use crate::error::{CliError, CliResult};
use crate::Globals;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Speaker attribute CSV (speaker_id, age, nationality, gender).
    #[arg(long)]
    pub attributes: PathBuf,
    /// Utterance listing in manifest JSONL form.
    #[arg(long)]
    pub listing: PathBuf,
    /// Target share of utterances on the train side.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 10)]
    pub age_bins: usize,
    /// Nationalities seen on fewer training utterances map to UNK.
    #[arg(long, default_value_t = 2)]
    pub nationality_min_count: usize,
}

#[derive(Serialize)]
struct VocabFile {
    speaker: LabelVocab,
    #[serde(skip_serializing_if = "Option::is_none")]
    nationality: Option<LabelVocab>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gender: Option<LabelVocab>,
    #[serde(skip_serializing_if = "Option::is_none")]
    age_bin_edges: Option<Vec<f64>>,
}

pub fn run(g: &Globals, a: &Args) -> CliResult<()> {
    require_file(&a.attributes, "attribute CSV")?;
    require_file(&a.listing, "utterance listing")?;
    let out = g.prepare_out("train.jsonl")?;
    let table = read_attribute_csv(&a.attributes)?;
    let mut manifest = load_manifest(&a.listing)?;
    if manifest.is_empty() {
        return Err(CliError::data(format!("{} lists no utterances", a.listing.display())));
    }
    apply_attributes(&mut manifest, &table);
    let unknown: BTreeSet<&str> =
        manifest.speakers().into_iter().filter(|s| !table.contains_key(*s)).collect();
    if !unknown.is_empty() {
        log::warn!("{} speaker(s) have no attribute row, e.g. {:?}", unknown.len(), unknown.iter().next());
    }

    let ages: Vec<f64> = manifest.records.iter().filter_map(|r| r.attributes.age).collect();
    let binner = if ages.is_empty() {
        log::warn!("no ages available; the split balances sizes only");
        AgeBinner::new(0.0, 1.0, a.age_bins)?
    } else {
        make_age_binner(&ages, a.age_bins)?
    };
    let seed = g.seed.unwrap_or(0);
    let (train, test) = split_train_test(&manifest, a.train_fraction, &binner, seed)?;
    let report = split_report(&train, &test, &binner);

    let has = |f: fn(&mtlspk::dataio::UtteranceRecord) -> bool| train.records.iter().any(f);
    let vocab = VocabFile {
        speaker: LabelVocab::speakers(&train),
        nationality: if has(|r| r.attributes.nationality.is_some()) {
            Some(build_nationality_vocab(&train, a.nationality_min_count)?)
        } else {
            None
        },
        gender: has(|r| r.attributes.gender.is_some()).then(|| build_gender_vocab(&train)),
        age_bin_edges: (!ages.is_empty()).then(|| binner.edges().to_vec()),
    };

    let train_speakers = train.speakers();
    let unseen: Vec<&str> = test.speakers().into_iter().filter(|s| !train_speakers.contains(s)).collect();

    save_manifest(out.join("train.jsonl"), &train)?;
    save_manifest(out.join("test.jsonl"), &test)?;
    write_json(&out.join("vocab.json"), &vocab)?;
    write_json(&out.join("split_report.json"), &report)?;
    write_speaker_list(out.join("unseen_speakers.txt"), unseen.iter().copied())?;
    log::info!(
        "split {} utterances: {} train / {} test ({} unseen test speakers)",
        manifest.len(),
        train.len(),
        test.len(),
        unseen.len()
    );
    Ok(())
}
