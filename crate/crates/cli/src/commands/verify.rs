use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;

use mtlspk::dataio::read_features;
use mtlspk::evaluation::{compute_eer, read_trials, score_trials, write_scores};
use mtlspk::model::{Checkpoint, Embedding};
use mtlspk::training::wrap_chunk;
use rayon::prelude::*;
use serde_json::json;

use super::features::load_resolved;
use super::{require_file, write_json};
use crate::error::{CliError, CliResult};
use crate::Globals;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub trials: PathBuf,
    /// Manifest covering every utterance the trials mention.
    #[arg(long)]
    pub manifest: PathBuf,
}

pub fn run(g: &Globals, a: &Args) -> CliResult<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.trials, "trial list")?;
    let manifest = load_resolved(&a.manifest)?;
    let trials = read_trials(&a.trials)?;
    if trials.is_empty() {
        return Err(CliError::data(format!("{} contains no trials", a.trials.display())));
    }
    let by_id: HashMap<&str, &mtlspk::dataio::UtteranceRecord> =
        manifest.records.iter().map(|r| (r.utt_id.as_str(), r)).collect();
    let needed: BTreeSet<&str> = trials.iter().flat_map(|t| [t.enrol_utt.as_str(), t.test_utt.as_str()]).collect();
    if let Some(missing) = needed.iter().find(|u| !by_id.contains_key(**u)) {
        return Err(CliError::data(format!(
            "trial utterance {missing:?} is not in {}",
            a.manifest.display()
        )));
    }
    let out = g.prepare_out("eer.json")?;
    let net = Checkpoint::load(&a.checkpoint)?.to_net()?;
    let min = net.min_frames();
    let needed: Vec<&str> = needed.into_iter().collect();
    let embeddings: HashMap<String, Embedding<f32>> = needed
        .par_iter()
        .map(|u| -> CliResult<(String, Embedding<f32>)> {
            let x = read_features(&by_id[u].feature_path)?.into_inner();
            let x = if x.nrows() < min { wrap_chunk(&x, 0, min) } else { x };
            Ok((u.to_string(), net.extract_embedding(x.view())?))
        })
        .collect::<CliResult<_>>()?;
    let scores = score_trials(&embeddings, &trials)?;
    write_scores(out.join("scores.txt"), &trials, &scores)?;
    let pairs: Vec<(f64, bool)> = scores.iter().zip(&trials).map(|(&s, t)| (s, t.target)).collect();
    let eer = compute_eer(&pairs)?;
    write_json(&out.join("eer.json"), &json!({ "eer": eer.eer, "eer_percent": 100.0 * eer.eer, "threshold": eer.threshold, "n_target": eer.n_target, "n_nontarget": eer.n_nontarget }))?;
    log::info!("EER {:.2}% over {} trials", 100.0 * eer.eer, trials.len());
    Ok(())
}
