//! Per-task classification losses and their weighted combination
//! `L = L_primary + sum_m lambda_m L_m`.

use std::fmt;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{
    default_hidden, default_margin, default_scale, Gradients, HeadCache, HeadKind, SpeakerNet,
    TaskHeadSpec,
};
use crate::real::Real;

/// Where a task's class labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Speaker,
    Age,
    Nationality,
    Gender,
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSource::Speaker => "speaker",
            LabelSource::Age => "age",
            LabelSource::Nationality => "nationality",
            LabelSource::Gender => "gender",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub task_name: String,
    pub label_source: LabelSource,
    /// Loss weight relative to the primary task; ignored on the primary.
    #[serde(default)]
    pub lambda: f64,
    pub kind: HeadKind,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    /// Train on a seeded permutation of this task's labels.
    #[serde(default)]
    pub shuffle: bool,
}

impl TaskConfig {
    pub fn new(task_name: impl Into<String>, label_source: LabelSource, kind: HeadKind) -> Self {
        Self {
            task_name: task_name.into(),
            label_source,
            lambda: 0.0,
            kind,
            margin: default_margin(),
            scale: default_scale(),
            hidden_dim: default_hidden(),
            shuffle: false,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_hidden(mut self, hidden_dim: usize) -> Self {
        self.hidden_dim = hidden_dim;
        self
    }

    pub fn head_spec(&self, n_classes: usize) -> TaskHeadSpec {
        TaskHeadSpec {
            task_name: self.task_name.clone(),
            kind: self.kind,
            n_classes,
            margin: self.margin,
            scale: self.scale,
            hidden_dim: self.hidden_dim,
        }
    }
}

/// The primary (weight 1) task plus `M` weighted auxiliary tasks.
///
/// The primary task normally classifies speakers; pointing it at another
/// label source gives the single-task controls (age only, random labels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiTaskConfig {
    pub primary: TaskConfig,
    #[serde(default)]
    pub tasks: Vec<TaskConfig>,
    #[serde(default = "default_age_bins")]
    pub age_bins: usize,
    #[serde(default = "default_nationality_min_count")]
    pub nationality_min_count: usize,
}

fn default_age_bins() -> usize {
    10
}

fn default_nationality_min_count() -> usize {
    2
}

impl MultiTaskConfig {
    pub fn speaker_only(head: HeadKind) -> Self {
        Self {
            primary: TaskConfig::new("speaker", LabelSource::Speaker, head),
            tasks: Vec::new(),
            age_bins: default_age_bins(),
            nationality_min_count: default_nationality_min_count(),
        }
    }

    pub fn with_task(mut self, task: TaskConfig) -> Self {
        self.tasks.push(task);
        self
    }

    /// Primary first, then auxiliaries in configuration order.
    pub fn all_tasks(&self) -> impl Iterator<Item = &TaskConfig> {
        std::iter::once(&self.primary).chain(self.tasks.iter())
    }

    pub fn num_tasks(&self) -> usize {
        1 + self.tasks.len()
    }

    /// Loss weight per task, primary fixed at 1.
    pub fn weights(&self) -> Vec<f64> {
        std::iter::once(1.0).chain(self.tasks.iter().map(|t| t.lambda)).collect()
    }

    pub fn uses_source(&self, src: LabelSource) -> bool {
        self.all_tasks().any(|t| t.label_source == src)
    }

    /// All violations, each prefixed with its field path.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut names = std::collections::BTreeSet::new();
        for (i, t) in self.all_tasks().enumerate() {
            let path = if i == 0 {
                "mtl.primary".to_string()
            } else {
                format!("mtl.tasks[{}]", i - 1)
            };
            if t.task_name.is_empty() {
                errs.push(format!("{path}.task_name must not be empty"));
            }
            if !names.insert(t.task_name.as_str()) {
                errs.push(format!("{path}.task_name {:?} is not unique", t.task_name));
            }
            if i > 0 && !(t.lambda >= 0.0 && t.lambda.is_finite()) {
                errs.push(format!("{path}.lambda must be a finite value >= 0, got {}", t.lambda));
            }
            if !(t.margin >= 0.0) {
                errs.push(format!("{path}.margin must be >= 0"));
            }
            if !(t.scale > 0.0) {
                errs.push(format!("{path}.scale must be > 0"));
            }
            if t.hidden_dim == 0 {
                errs.push(format!("{path}.hidden_dim must be positive"));
            }
        }
        if self.age_bins == 0 {
            errs.push("mtl.age_bins must be >= 1".into());
        }
        if self.nationality_min_count < 2 {
            errs.push("mtl.nationality_min_count must be >= 2".into());
        }
        errs
    }
}

/// Feature chunks with per-task labels, `labels[task][utterance]`; a `None`
/// label excludes that utterance from the task.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<F> {
    pub features: Vec<Array2<F>>,
    pub labels: Vec<Vec<Option<usize>>>,
}

impl<F: Real> Batch<F> {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn cast<G: Real>(&self) -> Batch<G> {
        Batch {
            features: self.features.iter().map(|x| x.mapv(|v| G::lit(v.as_f64()))).collect(),
            labels: self.labels.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskLoss {
    pub task_name: String,
    /// Mean loss over labelled utterances (0 when none).
    pub raw: f64,
    pub weighted: f64,
    pub accuracy: f64,
    pub n_examples: usize,
    pub lambda: f64,
}

impl TaskLoss {
    /// Set when no utterance in the batch carried this task's label.
    pub fn no_labels(&self) -> bool {
        self.n_examples == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub tasks: Vec<TaskLoss>,
}

impl LossReport {
    pub fn task(&self, name: &str) -> Option<&TaskLoss> {
        self.tasks.iter().find(|t| t.task_name == name)
    }
}

struct TaskMap<'a>(&'a [TaskLoss]);

impl Serialize for TaskMap<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Entry {
            raw: f64,
            weighted: f64,
            acc: f64,
            n: usize,
        }
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for t in self.0 {
            m.serialize_entry(
                &t.task_name,
                &Entry {
                    raw: t.raw,
                    weighted: t.weighted,
                    acc: t.accuracy,
                    n: t.n_examples,
                },
            )?;
        }
        m.end()
    }
}

impl Serialize for LossReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(2))?;
        m.serialize_entry("total", &self.total)?;
        m.serialize_entry("tasks", &TaskMap(&self.tasks))?;
        m.end()
    }
}

fn log_sum_exp<F: Real>(logits: ArrayView1<'_, F>) -> F {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let sum: F = logits.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `-log softmax(logits)[label]` with max subtraction.
pub fn cross_entropy<F: Real>(logits: ArrayView1<'_, F>, label: usize) -> Result<F> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite logits".into()));
    }
    Ok((log_sum_exp(logits) - logits[label]).max(F::zero()))
}

/// Cross-entropy of the margin-adjusted scaled cosines.
pub fn cosface_loss<F: Real>(cos: ArrayView1<'_, F>, label: usize, margin: F, scale: F) -> Result<F> {
    let tol = F::one() + F::lit(1e-6);
    if let Some(c) = cos.iter().find(|c| c.abs() > tol) {
        return Err(Error::invalid(format!("cosine {c} outside [-1, 1]")));
    }
    if label >= cos.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            cos.len()
        )));
    }
    let mut logits = cos.to_owned();
    logits[label] -= margin;
    logits *= scale;
    cross_entropy(logits.view(), label)
}

/// `speaker + sum(lambda * loss)`.
pub fn combine_losses<F: Real>(speaker_loss: F, aux: &[(F, F)]) -> Result<F> {
    if !speaker_loss.is_finite() {
        return Err(Error::Numerical("non-finite primary loss".into()));
    }
    let mut total = speaker_loss;
    for &(loss, lambda) in aux {
        if !loss.is_finite() || !lambda.is_finite() {
            return Err(Error::Numerical("non-finite auxiliary loss or weight".into()));
        }
        if lambda < F::zero() {
            return Err(Error::invalid(format!("negative loss weight {lambda}")));
        }
        total += lambda * loss;
    }
    Ok(total)
}

fn argmax<F: Real>(row: ArrayView1<'_, F>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy and accuracy over the labelled rows of `logits`.
/// `scores` decide accuracy by argmax. Returns `(mean loss, accuracy, n)`.
pub fn masked_cross_entropy<F: Real>(
    logits: ArrayView2<'_, F>,
    scores: ArrayView2<'_, F>,
    labels: &[Option<usize>],
) -> Result<(F, f64, usize)> {
    let mut sum = F::zero();
    let mut n = 0usize;
    let mut correct = 0usize;
    for (i, label) in labels.iter().enumerate() {
        if let Some(y) = *label {
            sum += cross_entropy(logits.row(i), y)?;
            n += 1;
            if argmax(scores.row(i)) == y {
                correct += 1;
            }
        }
    }
    if n == 0 {
        return Ok((F::zero(), 0.0, 0));
    }
    Ok((sum / F::lit(n as f64), correct as f64 / n as f64, n))
}

/// `d mean-loss / d logits`, scaled by `weight`; unlabeled rows get zero.
fn cross_entropy_grad<F: Real>(
    logits: ArrayView2<'_, F>,
    labels: &[Option<usize>],
    n: usize,
    weight: F,
) -> Array2<F> {
    let mut d = Array2::zeros(logits.raw_dim());
    let coef = weight / F::lit(n as f64);
    for (i, label) in labels.iter().enumerate() {
        if let Some(y) = *label {
            let row = logits.row(i);
            let lse = log_sum_exp(row);
            for (j, &z) in row.iter().enumerate() {
                let p = (z - lse).exp();
                d[(i, j)] = coef * (if j == y { p - F::one() } else { p });
            }
        }
    }
    d
}

fn check_alignment<F: Real>(net: &SpeakerNet<F>, batch: &Batch<F>, mtl: &MultiTaskConfig) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if net.num_heads() != mtl.num_tasks() || batch.labels.len() != mtl.num_tasks() {
        return Err(Error::invalid(format!(
            "task count mismatch: {} heads, {} label columns, {} tasks",
            net.num_heads(),
            batch.labels.len(),
            mtl.num_tasks()
        )));
    }
    for (h, t) in mtl.all_tasks().enumerate() {
        if net.config().heads[h].task_name != t.task_name {
            return Err(Error::invalid(format!(
                "head {h} is {:?} but task {h} is {:?}",
                net.config().heads[h].task_name, t.task_name
            )));
        }
        if batch.labels[h].len() != batch.len() {
            return Err(Error::invalid(format!("label column {h} has the wrong length")));
        }
    }
    if batch.labels[0].iter().any(Option::is_none) {
        return Err(Error::invalid("every utterance needs a primary-task label"));
    }
    Ok(())
}

fn evaluate<F: Real>(
    net: &SpeakerNet<F>,
    batch: &Batch<F>,
    mtl: &MultiTaskConfig,
    want_grad: bool,
) -> Result<(LossReport, Option<Gradients<F>>)> {
    check_alignment(net, batch, mtl)?;
    let views: Vec<_> = batch.features.iter().map(|x| x.view()).collect();
    let (emb, caches) = net.forward_batch(&views)?;
    let mut grads = want_grad.then(|| net.params().zeros_like());
    let mut d_emb = Array2::<F>::zeros(emb.raw_dim());
    let mut tasks = Vec::with_capacity(mtl.num_tasks());
    let mut raw_losses = Vec::with_capacity(mtl.num_tasks());
    for (h, (task, lambda)) in mtl.all_tasks().zip(mtl.weights()).enumerate() {
        let labels = &batch.labels[h];
        let (logits, cache) = net.forward_head(h, emb.view(), Some(labels))?;
        let (raw, acc, n) = match &cache {
            HeadCache::CosFace { cos, .. } => masked_cross_entropy(logits.view(), cos.view(), labels)?,
            HeadCache::Mlp { .. } => masked_cross_entropy(logits.view(), logits.view(), labels)?,
        };
        let weight = F::lit(lambda);
        if let Some(g) = grads.as_mut() {
            if n > 0 && lambda != 0.0 {
                let d_logits = cross_entropy_grad(logits.view(), labels, n, weight);
                let d = net.backward_head(h, emb.view(), &cache, d_logits.view(), g);
                d_emb += &d;
            }
        }
        raw_losses.push((raw, weight));
        tasks.push(TaskLoss {
            task_name: task.task_name.clone(),
            raw: raw.as_f64(),
            weighted: (weight * raw).as_f64(),
            accuracy: acc,
            n_examples: n,
            lambda,
        });
    }
    let total = combine_losses(raw_losses[0].0, &raw_losses[1..])?;
    if let Some(g) = grads.as_mut() {
        net.backward_batch(&caches, d_emb.view(), g);
    }
    Ok((
        LossReport {
            total: total.as_f64(),
            tasks,
        },
        grads,
    ))
}

/// Per-task batch means combined with the task weights.
pub fn batch_loss<F: Real>(net: &SpeakerNet<F>, batch: &Batch<F>, mtl: &MultiTaskConfig) -> Result<LossReport> {
    Ok(evaluate(net, batch, mtl, false)?.0)
}

/// [`batch_loss`] plus the gradient of the total with respect to every
/// parameter. Tasks with zero weight contribute no gradient.
pub fn batch_loss_and_grad<F: Real>(
    net: &SpeakerNet<F>,
    batch: &Batch<F>,
    mtl: &MultiTaskConfig,
) -> Result<(LossReport, Gradients<F>)> {
    let (report, grads) = evaluate(net, batch, mtl, true)?;
    Ok((report, grads.expect("requested gradients")))
}
