use serde::{Deserialize, Serialize};

use super::corpus::{LabeledCorpus, Vocabularies};
use super::sgd::TrainableMask;
use super::train::{check_corpus, finish, head_specs, run_phase, LogEntry, Phase, TrainConfig, TrainOutcome, TrainState, TrainStatus};
use crate::dataio::Manifest;
use crate::error::{Error, Result};
use crate::losses::{LabelSource, MultiTaskConfig, TaskConfig};
use crate::model::{default_hidden, Checkpoint, HeadKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FineTuneMode {
    /// After the freeze phase only the embedding affine joins the heads.
    LastLinear,
    Full,
}

impl std::str::FromStr for FineTuneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last_linear" => Ok(Self::LastLinear),
            "full" => Ok(Self::Full),
            _ => Err(Error::invalid(format!("unknown fine-tune mode {s:?} (expected \"last_linear\" or \"full\")"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelSet {
    #[serde(rename = "speaker")]
    Speaker,
    #[serde(rename = "speaker+age")]
    SpeakerAge,
}

impl std::str::FromStr for LabelSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speaker" => Ok(Self::Speaker),
            "speaker+age" => Ok(Self::SpeakerAge),
            _ => Err(Error::invalid(format!("unknown label set {s:?} (expected \"speaker\" or \"speaker+age\")"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FineTuneConfig {
    pub mode: FineTuneMode,
    pub total_iterations: usize,
    pub freeze_iterations: usize,
    pub label_set: LabelSet,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub batch_size: Option<usize>,
    pub chunk_frames: Option<usize>,
    pub lambda_age: f64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            mode: FineTuneMode::LastLinear,
            total_iterations: 5000,
            freeze_iterations: 1000,
            label_set: LabelSet::Speaker,
            lr: None,
            momentum: None,
            batch_size: None,
            chunk_frames: None,
            lambda_age: 0.05,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.total_iterations == 0 {
            errs.push("finetune.total_iterations must be positive".into());
        }
        if self.freeze_iterations >= self.total_iterations {
            errs.push(format!(
                "finetune.freeze_iterations ({}) must be smaller than finetune.total_iterations ({})",
                self.freeze_iterations, self.total_iterations
            ));
        }
        if !(self.lambda_age >= 0.0 && self.lambda_age.is_finite()) {
            errs.push("finetune.lambda_age must be a finite value >= 0".into());
        }
        if self.lr.is_some_and(|v| !(v > 0.0)) {
            errs.push("finetune.lr must be positive".into());
        }
        if self.momentum.is_some_and(|v| !(0.0..1.0).contains(&v)) {
            errs.push("finetune.momentum must be in [0, 1)".into());
        }
        if self.batch_size == Some(0) || self.chunk_frames == Some(0) {
            errs.push("finetune.batch_size and finetune.chunk_frames must be positive".into());
        }
        errs
    }

    /// Task list for the target data: a fresh speaker head shaped like the
    /// source model's primary head, plus an age head for `speaker+age`.
    pub fn target_tasks(&self, source: &Checkpoint, base: &MultiTaskConfig) -> Result<MultiTaskConfig> {
        let primary = source
            .config
            .heads
            .first()
            .ok_or_else(|| Error::invalid("checkpoint has no heads"))?;
        let speaker = TaskConfig {
            task_name: "speaker".into(),
            label_source: LabelSource::Speaker,
            lambda: 0.0,
            kind: primary.kind,
            margin: primary.margin,
            scale: primary.scale,
            hidden_dim: primary.hidden_dim,
            shuffle: false,
        };
        let mut mtl = MultiTaskConfig {
            primary: speaker,
            tasks: Vec::new(),
            ..base.clone()
        };
        if self.label_set == LabelSet::SpeakerAge {
            let age = base
                .tasks
                .iter()
                .find(|t| t.label_source == LabelSource::Age)
                .cloned()
                .unwrap_or_else(|| TaskConfig::new("age", LabelSource::Age, HeadKind::MlpCe).with_hidden(default_hidden()));
            mtl.tasks.push(TaskConfig {
                lambda: self.lambda_age,
                shuffle: false,
                ..age
            });
        }
        Ok(mtl)
    }
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome {
    /// State right after the last frozen iteration.
    pub after_freeze: Checkpoint,
    pub outcome: TrainOutcome,
}

/// Fine-tunes `source` on a target manifest.
pub fn finetune(
    source: &Checkpoint,
    ft: &FineTuneConfig,
    base: &TrainConfig,
    target: &Manifest,
    valid: Option<&Manifest>,
    sink: &mut dyn FnMut(&LogEntry),
) -> Result<FineTuneOutcome> {
    let mtl = ft.target_tasks(source, &base.mtl)?;
    let vocab = Vocabularies::build(target, &mtl)?;
    let corpus = LabeledCorpus::from_manifest(target, &vocab, &mtl, base.seed)?;
    let valid = match valid {
        Some(v) if !v.is_empty() => Some(LabeledCorpus::from_manifest(v, &vocab, &mtl, base.seed)?),
        _ => None,
    };
    finetune_corpus(source, ft, base, &vocab, &corpus, valid.as_ref(), sink)
}

/// [`finetune`] on labelled features already in memory. `corpus` must be
/// labelled for [`FineTuneConfig::target_tasks`].
pub fn finetune_corpus(
    source: &Checkpoint,
    ft: &FineTuneConfig,
    base: &TrainConfig,
    vocab: &Vocabularies,
    corpus: &LabeledCorpus,
    valid: Option<&LabeledCorpus>,
    sink: &mut dyn FnMut(&LogEntry),
) -> Result<FineTuneOutcome> {
    let errs = ft.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let mtl = ft.target_tasks(source, &base.mtl)?;
    let extractor = &source.config.extractor;
    check_corpus(corpus, extractor, &mtl)?;
    let chunk_frames = ft.chunk_frames.unwrap_or(base.chunk_frames);
    if chunk_frames < extractor.min_frames() {
        return Err(Error::Config(vec![format!(
            "chunk_frames {chunk_frames} is below the extractor's minimum context of {} frames",
            extractor.min_frames()
        )]));
    }
    let net = source.to_net()?.with_new_heads(head_specs(&mtl, vocab)?, base.seed)?;
    let mut state = TrainState::new(net, base.seed);
    let phase = Phase {
        corpus,
        valid,
        mtl: &mtl,
        batch_size: ft.batch_size.unwrap_or(base.batch_size),
        chunk_frames,
        lr: ft.lr.unwrap_or(base.lr),
        momentum: ft.momentum.unwrap_or(base.momentum),
        grad_clip: base.grad_clip,
        validation_every: base.validation_every,
        last_iteration: ft.total_iterations as u64,
    };
    let mut log = Vec::new();
    let frozen = TrainableMask::heads_only(state.net.params());
    let mut diverged = run_phase(&mut state, &phase, ft.freeze_iterations as u64, &frozen, &mut log, sink)?;
    let extra = super::train::checkpoint_extra(vocab, &mtl, TrainStatus::Completed);
    let after_freeze = Checkpoint::from_net(&state.net, state.iteration, extra);
    if diverged.is_none() {
        let mask = match ft.mode {
            FineTuneMode::LastLinear => TrainableMask::heads_and_last_linear(state.net.params()),
            FineTuneMode::Full => TrainableMask::all(state.net.params()),
        };
        let rest = (ft.total_iterations - ft.freeze_iterations) as u64;
        diverged = run_phase(&mut state, &phase, rest, &mask, &mut log, sink)?;
    }
    let status = diverged.map_or(TrainStatus::Completed, |iteration| TrainStatus::Diverged { iteration });
    Ok(FineTuneOutcome {
        after_freeze,
        outcome: finish(state, vocab, &mtl, status, log),
    })
}
