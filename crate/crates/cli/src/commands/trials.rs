use std::collections::BTreeSet;
use std::path::PathBuf;

use mtlspk::dataio::load_manifest;
use mtlspk::evaluation::{make_trials, read_speaker_list, write_trials};

use super::require_file;
use crate::error::{CliError, CliResult};
use crate::Globals;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Test-side manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Speakers in this manifest are excluded from the trials.
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    /// Alternatively, an explicit list of speakers to exclude.
    #[arg(long, conflicts_with = "train_manifest")]
    pub exclude: Option<PathBuf>,
    /// Target (and nontarget) trials per speaker.
    #[arg(long, default_value_t = 15)]
    pub per_speaker: usize,
}

pub fn run(g: &Globals, a: &Args) -> CliResult<()> {
    if a.per_speaker == 0 {
        return Err(CliError::config("--per-speaker must be at least 1"));
    }
    require_file(&a.manifest, "manifest")?;
    let test = load_manifest(&a.manifest)?;
    let train_speakers: BTreeSet<String> = match (&a.train_manifest, &a.exclude) {
        (Some(p), _) => {
            require_file(p, "train manifest")?;
            load_manifest(p)?.speakers().into_iter().map(String::from).collect()
        }
        (None, Some(p)) => {
            require_file(p, "speaker list")?;
            read_speaker_list(p)?
        }
        (None, None) => BTreeSet::new(),
    };
    let out = g.prepare_out("trials.txt")?;
    let trials = make_trials(&test, &train_speakers, a.per_speaker, g.seed.unwrap_or(0))?;
    write_trials(out.join("trials.txt"), &trials)?;
    log::info!("wrote {} trials", trials.len());
    Ok(())
}
