use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::corpus::{holdout_validation, sample_batch, wrap_chunk, LabeledCorpus, Vocabularies};
use super::sgd::{clip_grad_norm, sgd_step, TrainableMask};
use crate::dataio::Manifest;
use crate::error::{Error, Result};
use crate::losses::{batch_loss, batch_loss_and_grad, Batch, LossReport, MultiTaskConfig, TaskLoss};
use crate::model::{Checkpoint, ExtractorConfig, ModelConfig, ModelParams, SpeakerNet, TaskHeadSpec};

/// Fraction of training utterances held out when no validation manifest is
/// supplied.
pub const HOLDOUT_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub chunk_frames: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub validation_every: usize,
    /// Global gradient-norm clipping; off when `None`.
    pub grad_clip: Option<f64>,
    pub mtl: MultiTaskConfig,
}

impl TrainConfig {
    pub fn new(mtl: MultiTaskConfig) -> Self {
        Self {
            iterations: 50_000,
            batch_size: 500,
            chunk_frames: 350,
            lr: 0.2,
            momentum: 0.5,
            seed: 0,
            validation_every: 1000,
            grad_clip: None,
            mtl,
        }
    }

    pub fn validate(&self, extractor: &ExtractorConfig) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("iterations", self.iterations),
            ("batch_size", self.batch_size),
            ("chunk_frames", self.chunk_frames),
            ("validation_every", self.validation_every),
        ] {
            if v == 0 {
                errs.push(format!("train.{name} must be positive"));
            }
        }
        if self.chunk_frames < extractor.min_frames() {
            errs.push(format!(
                "train.chunk_frames {} is below the extractor's minimum context of {} frames",
                self.chunk_frames,
                extractor.min_frames()
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errs.push("train.lr must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            errs.push("train.momentum must be in [0, 1)".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                errs.push("train.grad_clip must be positive".into());
            }
        }
        errs.extend(self.mtl.validate());
        errs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogEntry {
    Train { iter: u64, report: LossReport },
    Validation { iter: u64, report: LossReport },
}

impl LogEntry {
    pub fn iter(&self) -> u64 {
        match self {
            LogEntry::Train { iter, .. } | LogEntry::Validation { iter, .. } => *iter,
        }
    }

    pub fn report(&self) -> &LossReport {
        match self {
            LogEntry::Train { report, .. } | LogEntry::Validation { report, .. } => report,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self.report()).expect("loss report serializes");
        let obj = v.as_object_mut().expect("object");
        obj.insert("iter".into(), json!(self.iter()));
        if matches!(self, LogEntry::Validation { .. }) {
            obj.insert("split".into(), json!("valid"));
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    /// The loss or a gradient became non-finite at `iteration`; the returned
    /// state is the last good one.
    Diverged { iteration: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestRecord {
    pub iteration: u64,
    pub accuracy: f64,
    pub params: ModelParams<f32>,
}

/// Mutable optimisation state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub net: SpeakerNet<f32>,
    pub velocity: ModelParams<f32>,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
    pub best: Option<BestRecord>,
}

impl TrainState {
    pub fn new(net: SpeakerNet<f32>, seed: u64) -> Self {
        let velocity = net.params().zeros_like();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self { net, velocity, iteration: 0, rng, best: None }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: Checkpoint,
    pub best_checkpoint: Option<Checkpoint>,
    pub log: Vec<LogEntry>,
    pub status: TrainStatus,
}

/// Per-task accuracy and loss over a whole corpus, each utterance scored on
/// its first `chunk_frames` frames (wrapped when shorter).
pub fn evaluate_corpus(
    net: &SpeakerNet<f32>,
    corpus: &LabeledCorpus,
    mtl: &MultiTaskConfig,
    chunk_frames: usize,
    batch_size: usize,
) -> Result<LossReport> {
    let mut sums: Vec<(f64, f64, usize)> = vec![(0.0, 0.0, 0); mtl.num_tasks()];
    for start in (0..corpus.len()).step_by(batch_size.max(1)) {
        let end = (start + batch_size).min(corpus.len());
        let batch = Batch {
            features: corpus.features[start..end].iter().map(|x| wrap_chunk(x, 0, chunk_frames)).collect(),
            labels: corpus.labels.iter().map(|c| c[start..end].to_vec()).collect(),
        };
        let r = batch_loss(net, &batch, mtl)?;
        for (s, t) in sums.iter_mut().zip(&r.tasks) {
            s.0 += t.raw * t.n_examples as f64;
            s.1 += t.accuracy * t.n_examples as f64;
            s.2 += t.n_examples;
        }
    }
    let tasks: Vec<TaskLoss> = mtl
        .all_tasks()
        .zip(mtl.weights())
        .zip(sums)
        .map(|((t, lambda), (l, a, n))| {
            let d = n.max(1) as f64;
            TaskLoss {
                task_name: t.task_name.clone(),
                raw: l / d,
                weighted: lambda * l / d,
                accuracy: a / d,
                n_examples: n,
                lambda,
            }
        })
        .collect();
    Ok(LossReport { total: tasks.iter().map(|t| t.weighted).sum(), tasks })
}

/// Hyperparameters of one optimisation phase.
pub(crate) struct Phase<'a> {
    pub corpus: &'a LabeledCorpus,
    pub valid: Option<&'a LabeledCorpus>,
    pub mtl: &'a MultiTaskConfig,
    pub batch_size: usize,
    pub chunk_frames: usize,
    pub lr: f64,
    pub momentum: f64,
    pub grad_clip: Option<f64>,
    pub validation_every: usize,
    /// Iteration number at which the whole run ends (final validation).
    pub last_iteration: u64,
}

fn is_numerical(e: &Error) -> bool {
    matches!(e, Error::Numerical(_))
}

fn validate_now(state: &mut TrainState, phase: &Phase<'_>, log: &mut Vec<LogEntry>, sink: &mut dyn FnMut(&LogEntry)) -> Result<()> {
    let Some(valid) = phase.valid.filter(|v| !v.is_empty()) else {
        return Ok(());
    };
    let report = evaluate_corpus(&state.net, valid, phase.mtl, phase.chunk_frames, phase.batch_size)?;
    let acc = report.tasks[0].accuracy;
    if state.best.as_ref().is_none_or(|b| acc > b.accuracy) {
        state.best = Some(BestRecord {
            iteration: state.iteration,
            accuracy: acc,
            params: state.net.params().clone(),
        });
    }
    let entry = LogEntry::Validation { iter: state.iteration, report };
    sink(&entry);
    log.push(entry);
    Ok(())
}

/// Runs `steps` SGD iterations under `mask`. Returns the iteration at which
/// training diverged, if it did; the state then holds the last good values.
pub(crate) fn run_phase(
    state: &mut TrainState,
    phase: &Phase<'_>,
    steps: u64,
    mask: &TrainableMask,
    log: &mut Vec<LogEntry>,
    sink: &mut dyn FnMut(&LogEntry),
) -> Result<Option<u64>> {
    let lr = phase.lr as f32;
    let momentum = phase.momentum as f32;
    for _ in 0..steps {
        let iter = state.iteration + 1;
        let batch = sample_batch(phase.corpus, phase.batch_size, phase.chunk_frames, &mut state.rng)?;
        let (report, mut grads) = match batch_loss_and_grad(&state.net, &batch, phase.mtl) {
            Ok(v) => v,
            Err(e) if is_numerical(&e) => return Ok(Some(iter)),
            Err(e) => return Err(e),
        };
        if !report.total.is_finite() {
            return Ok(Some(iter));
        }
        if let Some(c) = phase.grad_clip {
            clip_grad_norm(&mut grads, c);
        }
        let mut params = state.net.params().clone();
        let mut velocity = state.velocity.clone();
        match sgd_step(&mut params, &mut velocity, &grads, lr, momentum, mask) {
            Ok(()) => {}
            Err(e) if is_numerical(&e) => return Ok(Some(iter)),
            Err(e) => return Err(e),
        }
        *state.net.params_mut() = params;
        state.velocity = velocity;
        state.iteration = iter;
        let entry = LogEntry::Train { iter, report };
        sink(&entry);
        log.push(entry);
        if iter % phase.validation_every as u64 == 0 || iter == phase.last_iteration {
            validate_now(state, phase, log, sink)?;
        }
    }
    Ok(None)
}

pub(crate) fn head_specs(mtl: &MultiTaskConfig, vocab: &Vocabularies) -> Result<Vec<TaskHeadSpec>> {
    mtl.all_tasks()
        .map(|t| Ok(t.head_spec(vocab.num_classes(t.label_source)?)))
        .collect()
}

pub(crate) fn checkpoint_extra(vocab: &Vocabularies, mtl: &MultiTaskConfig, status: TrainStatus) -> serde_json::Value {
    json!({ "vocab": vocab, "mtl": mtl, "status": status })
}

pub(crate) fn check_corpus(corpus: &LabeledCorpus, extractor: &ExtractorConfig, mtl: &MultiTaskConfig) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::data("training corpus is empty"));
    }
    if corpus.feature_dim() != Some(extractor.input_dim) {
        return Err(Error::data(format!(
            "features have dimension {:?} but the model expects {}",
            corpus.feature_dim(),
            extractor.input_dim
        )));
    }
    if corpus.num_tasks() != mtl.num_tasks() {
        return Err(Error::invalid("corpus label columns do not match the task list"));
    }
    Ok(())
}

/// Trains from a manifest. Without `valid`, a random 2% of the training
/// utterances is held out.
pub fn train(
    config: &TrainConfig,
    extractor: &ExtractorConfig,
    train: &Manifest,
    valid: Option<&Manifest>,
    sink: &mut dyn FnMut(&LogEntry),
) -> Result<TrainOutcome> {
    let (train_m, valid_m) = match valid {
        Some(v) => (train.clone(), v.clone()),
        None => holdout_validation(train, HOLDOUT_FRACTION, config.seed)?,
    };
    let vocab = Vocabularies::build(&train_m, &config.mtl)?;
    let corpus = LabeledCorpus::from_manifest(&train_m, &vocab, &config.mtl, config.seed)?;
    let valid_corpus = if valid_m.is_empty() {
        None
    } else {
        match LabeledCorpus::from_manifest(&valid_m, &vocab, &config.mtl, config.seed) {
            Ok(c) => Some(c),
            Err(Error::Data(msg)) => {
                log::warn!("validation disabled: {msg}");
                None
            }
            Err(e) => return Err(e),
        }
    };
    train_corpus(config, extractor, &vocab, &corpus, valid_corpus.as_ref(), sink)
}

/// Trains on labelled features already in memory.
pub fn train_corpus(
    config: &TrainConfig,
    extractor: &ExtractorConfig,
    vocab: &Vocabularies,
    corpus: &LabeledCorpus,
    valid: Option<&LabeledCorpus>,
    sink: &mut dyn FnMut(&LogEntry),
) -> Result<TrainOutcome> {
    let errs = config.validate(extractor);
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    check_corpus(corpus, extractor, &config.mtl)?;
    let model = ModelConfig {
        extractor: extractor.clone(),
        heads: head_specs(&config.mtl, vocab)?,
    };
    let net = SpeakerNet::<f32>::new(model, config.seed)?;
    let mut state = TrainState::new(net, config.seed);
    let phase = Phase {
        corpus,
        valid,
        mtl: &config.mtl,
        batch_size: config.batch_size,
        chunk_frames: config.chunk_frames,
        lr: config.lr,
        momentum: config.momentum,
        grad_clip: config.grad_clip,
        validation_every: config.validation_every,
        last_iteration: config.iterations as u64,
    };
    let mask = TrainableMask::all(state.net.params());
    let mut log = Vec::new();
    let diverged = run_phase(&mut state, &phase, config.iterations as u64, &mask, &mut log, sink)?;
    let status = diverged.map_or(TrainStatus::Completed, |iteration| TrainStatus::Diverged { iteration });
    Ok(finish(state, vocab, &config.mtl, status, log))
}

pub(crate) fn finish(state: TrainState, vocab: &Vocabularies, mtl: &MultiTaskConfig, status: TrainStatus, log: Vec<LogEntry>) -> TrainOutcome {
    let extra = checkpoint_extra(vocab, mtl, status);
    let best_checkpoint = state.best.map(|b| Checkpoint {
        config: state.net.config().clone(),
        params: b.params,
        iteration: b.iteration,
        extra: extra.clone(),
    });
    TrainOutcome {
        final_checkpoint: Checkpoint::from_net(&state.net, state.iteration, extra),
        best_checkpoint,
        log,
        status,
    }
}
