use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mtlspk::model::Checkpoint;
use mtlspk::training::{finetune, holdout_validation, train, HOLDOUT_FRACTION, LogEntry, TrainOutcome, TrainStatus};
use serde_json::{json, Value};

use super::features::load_resolved;
use super::{require_file, write_json};
use crate::config::{RunConfig, RunMode};
use crate::error::{CliError, CliResult};
use crate::Globals;

#[derive(Debug, clap::Args)]
pub struct FinetuneArgs {
    /// Source checkpoint; overrides `data.checkpoint`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

const MARKER: &str = "summary.json";

fn load_config(g: &Globals, want: RunMode) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(g.config_path()?)?;
    if cfg.mode != want {
        let name = |m: RunMode| if m == RunMode::Train { "train" } else { "finetune" };
        return Err(CliError::config(format!(
            "mode is {:?} but the {} command was run",
            name(cfg.mode),
            name(want)
        )));
    }
    if let Some(s) = g.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

/// Streams log entries to `log.jsonl`, remembering the first write error.
struct LogSink {
    w: BufWriter<File>,
    err: Option<std::io::Error>,
}

impl LogSink {
    fn create(path: &Path) -> CliResult<Self> {
        let f = File::create(path).map_err(|e| CliError::data(format!("cannot create {}: {e}", path.display())))?;
        Ok(Self { w: BufWriter::new(f), err: None })
    }

    fn push(&mut self, e: &LogEntry) {
        if self.err.is_some() {
            return;
        }
        if let Err(err) = writeln!(self.w, "{}", e.to_json()) {
            self.err = Some(err);
        }
        if let LogEntry::Validation { iter, report } = e {
            log::info!("iter {iter}: validation loss {:.4}", report.total);
        }
    }

    fn close(mut self) -> CliResult<()> {
        if let Some(e) = self.err.take() {
            return Err(e.into());
        }
        self.w.flush()?;
        Ok(())
    }
}

fn summary(mode: RunMode, primary: &str, outcome: &TrainOutcome) -> Value {
    let last = |valid: bool| {
        outcome.log.iter().rev().find(|e| matches!(e, LogEntry::Validation { .. }) == valid).map(LogEntry::to_json)
    };
    let best = outcome.best_checkpoint.as_ref().map(|b| {
        let acc = outcome.log.iter().find_map(|e| match e {
            LogEntry::Validation { iter, report } if *iter == b.iteration => report.task(primary).map(|t| t.accuracy),
            _ => None,
        });
        json!({ "iteration": b.iteration, "primary_accuracy": acc })
    });
    json!({
        "mode": mode,
        "status": outcome.status,
        "iterations": outcome.final_checkpoint.iteration,
        "primary_task": primary,
        "final_train": last(false),
        "final_validation": last(true),
        "best": best,
    })
}

fn write_outcome(out: &Path, cfg: &RunConfig, primary: &str, outcome: &TrainOutcome, after_freeze: Option<&Checkpoint>) -> CliResult<()> {
    let ck = out.join("checkpoints");
    std::fs::create_dir_all(&ck)?;
    outcome.final_checkpoint.save(ck.join("final.ckpt"))?;
    if let Some(b) = &outcome.best_checkpoint {
        b.save(ck.join("best.ckpt"))?;
    }
    if let Some(a) = after_freeze {
        a.save(ck.join("after_freeze.ckpt"))?;
    }
    write_json(&out.join(MARKER), &summary(cfg.mode, primary, outcome))?;
    match outcome.status {
        TrainStatus::Completed => Ok(()),
        TrainStatus::Diverged { iteration } => Err(CliError::Numerical(format!(
            "training diverged at iteration {iteration}; the last good state was saved to {}",
            ck.join("final.ckpt").display()
        ))),
    }
}

fn start_run(g: &Globals, cfg: &RunConfig) -> CliResult<(PathBuf, LogSink)> {
    let out = g.prepare_out(MARKER)?;
    // a forced rerun must not leave a stale summary behind if it fails
    let _ = std::fs::remove_file(out.join(MARKER));
    write_json(&out.join("config.json"), cfg)?;
    let sink = LogSink::create(&out.join("log.jsonl"))?;
    Ok((out, sink))
}

pub fn run_train(g: &Globals) -> CliResult<()> {
    let cfg = load_config(g, RunMode::Train)?;
    let train_m = load_resolved(cfg.data.train_manifest.as_deref().expect("validated"))?;
    let valid_m = cfg.data.valid_manifest.as_deref().map(load_resolved).transpose()?;
    let (out, mut sink) = start_run(g, &cfg)?;
    let outcome = train(&cfg.train, &cfg.model, &train_m, valid_m.as_ref(), &mut |e| sink.push(e))?;
    sink.close()?;
    write_outcome(&out, &cfg, &cfg.train.mtl.primary.task_name, &outcome, None)
}

pub fn run_finetune(g: &Globals, a: &FinetuneArgs) -> CliResult<()> {
    let cfg = load_config(g, RunMode::Finetune)?;
    let ck_path = a
        .checkpoint
        .clone()
        .or_else(|| cfg.data.checkpoint.clone())
        .ok_or_else(|| CliError::config("a source checkpoint is required (data.checkpoint or --checkpoint)"))?;
    require_file(&ck_path, "checkpoint")?;
    let source = Checkpoint::load(&ck_path)?;
    let ft = cfg.finetune.clone().expect("finetune section is parsed in finetune mode");
    let target = load_resolved(cfg.data.train_manifest.as_deref().expect("validated"))?;
    let (target, valid_m) = match cfg.data.valid_manifest.as_deref() {
        Some(v) => (target, load_resolved(v)?),
        None => holdout_validation(&target, HOLDOUT_FRACTION, cfg.train.seed)?,
    };
    let primary = ft.target_tasks(&source, &cfg.train.mtl)?.primary.task_name;
    let (out, mut sink) = start_run(g, &cfg)?;
    let res = finetune(&source, &ft, &cfg.train, &target, Some(&valid_m), &mut |e| sink.push(e))?;
    sink.close()?;
    write_outcome(&out, &cfg, &primary, &res.outcome, Some(&res.after_freeze))
}
