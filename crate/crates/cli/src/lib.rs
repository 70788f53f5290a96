//! `mtlspk` command-line front end.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use error::{CliError, CliResult};

/// Environment variable naming the feature cache directory.
pub const CACHE_ENV: &str = "MTL_EMBED_CACHE";

#[derive(Debug, Parser)]
#[command(name = "mtlspk", version, about = "Multi-task speaker embedding pipeline")]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; created when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Attach speaker attributes and split recordings into train/test.
    Prepare(commands::prepare::Args),
    /// Compute MFCC features for every utterance (and optionally recording).
    ComputeFeatures(commands::features::Args),
    /// Train an extractor from a `mode: "train"` config.
    Train,
    /// Fine-tune a trained extractor from a `mode: "finetune"` config.
    Finetune(commands::train::FinetuneArgs),
    /// Sample verification trials from a test manifest.
    MakeTrials(commands::trials::Args),
    /// Score trials and report the EER.
    EvalVerify(commands::verify::Args),
    /// Diarize recordings and report DER.
    EvalDiarize(commands::diarize::Args),
    /// Age or nationality distribution as SVG plus CSV.
    Plot(commands::plot::Args),
}

/// Global flags shared by every command.
#[derive(Debug, Clone)]
pub struct Globals {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub force: bool,
}

impl Globals {
    pub fn out_dir(&self) -> CliResult<&Path> {
        self.out.as_deref().ok_or_else(|| CliError::config("--out is required for this command"))
    }

    pub fn config_path(&self) -> CliResult<&Path> {
        self.config
            .as_deref()
            .ok_or_else(|| CliError::config("--config is required for this command"))
    }

    /// Creates the output directory, refusing to reuse one that already holds
    /// `marker` unless forced.
    pub fn prepare_out(&self, marker: &str) -> CliResult<PathBuf> {
        let out = self.out_dir()?.to_path_buf();
        if out.join(marker).exists() && !self.force {
            return Err(CliError::config(format!(
                "{} already contains {marker}; pass --force to overwrite",
                out.display()
            )));
        }
        std::fs::create_dir_all(&out)
            .map_err(|e| CliError::data(format!("cannot create {}: {e}", out.display())))?;
        Ok(out)
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::config("--workers must be at least 1"));
        }
        // a second call in the same process (tests) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let g = Globals { config: cli.config, out: cli.out, seed: cli.seed, force: cli.force };
    match cli.command {
        Command::Prepare(a) => commands::prepare::run(&g, &a),
        Command::ComputeFeatures(a) => commands::features::run(&g, &a),
        Command::Train => commands::train::run_train(&g),
        Command::Finetune(a) => commands::train::run_finetune(&g, &a),
        Command::MakeTrials(a) => commands::trials::run(&g, &a),
        Command::EvalVerify(a) => commands::verify::run(&g, &a),
        Command::EvalDiarize(a) => commands::diarize::run(&g, &a),
        Command::Plot(a) => commands::plot::run(&g, &a),
    }
}

/// Parses arguments, runs, and maps the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mtlspk: {e}");
            e.exit_code()
        }
    }
}
