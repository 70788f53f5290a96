//! Run configuration: a single JSON document shared by `train` and
//! `finetune`, with sections `mode`, `model`, `mtl`, `train`, `finetune`,
//! `data`, `frontend` and `diarize`. Parsing collects every problem before
//! failing.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use mtlspk::evaluation::DiarizeConfig;
use mtlspk::frontend::MfccConfig;
use mtlspk::losses::{LabelSource, MultiTaskConfig, TaskConfig};
use mtlspk::model::{default_hidden, default_margin, default_scale, ExtractorConfig, FrameLayerConfig, HeadKind};
use mtlspk::training::{FineTuneConfig, FineTuneMode, LabelSet, TrainConfig};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Train,
    Finetune,
}

/// Input files named by the configuration, resolved against its directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DataPaths {
    pub train_manifest: Option<PathBuf>,
    pub valid_manifest: Option<PathBuf>,
    /// Source model for fine-tuning.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: RunMode,
    pub model: ExtractorConfig,
    pub train: TrainConfig,
    pub finetune: Option<FineTuneConfig>,
    pub data: DataPaths,
    pub frontend: MfccConfig,
    pub diarize: DiarizeConfig,
}

/// One JSON object being consumed field by field.
struct Section<'e> {
    path: String,
    obj: Map<String, Value>,
    used: BTreeSet<String>,
    errs: &'e mut Vec<String>,
}

impl<'e> Section<'e> {
    fn of(value: Option<&Value>, path: &str, errs: &'e mut Vec<String>) -> Self {
        let obj = match value {
            None | Some(Value::Null) => Map::new(),
            Some(Value::Object(m)) => m.clone(),
            Some(_) => {
                errs.push(format!("{path} must be an object"));
                Map::new()
            }
        };
        Self { path: path.to_string(), obj, used: BTreeSet::new(), errs }
    }

    fn field(&self, key: &str) -> String {
        if self.path.is_empty() { key.to_string() } else { format!("{}.{key}", self.path) }
    }

    fn take<T: DeserializeOwned>(&mut self, key: &str) -> Option<T> {
        self.used.insert(key.to_string());
        let v = self.obj.get(key)?.clone();
        match serde_json::from_value(v) {
            Ok(t) => Some(t),
            Err(e) => {
                let f = self.field(key);
                self.errs.push(format!("{f}: {e}"));
                None
            }
        }
    }

    fn required<T: DeserializeOwned>(&mut self, key: &str) -> Option<T> {
        if !self.obj.contains_key(key) {
            let f = self.field(key);
            self.errs.push(format!("{f} is required"));
        }
        self.take(key)
    }

    fn or<T: DeserializeOwned>(&mut self, key: &str, default: T) -> T {
        self.take(key).unwrap_or(default)
    }

    fn raw(&mut self, key: &str) -> Option<Value> {
        self.used.insert(key.to_string());
        self.obj.get(key).cloned()
    }

    fn finish(self) {
        for k in self.obj.keys() {
            if !self.used.contains(k) {
                let f = if self.path.is_empty() { k.clone() } else { format!("{}.{k}", self.path) };
                self.errs.push(format!("{f} is not a recognised field"));
            }
        }
    }
}

fn parse_task(v: Option<&Value>, path: &str, default_name: Option<&str>, primary: bool, errs: &mut Vec<String>) -> Option<TaskConfig> {
    let mut s = Section::of(v, path, errs);
    let task_name = match default_name {
        Some(d) => s.or("task_name", d.to_string()),
        None => s.required("task_name").unwrap_or_default(),
    };
    let label_source = if primary {
        s.or("label_source", LabelSource::Speaker)
    } else {
        s.required("label_source").unwrap_or(LabelSource::Speaker)
    };
    let lambda = if primary {
        if s.obj.contains_key("lambda") {
            let f = s.field("lambda");
            s.errs.push(format!("{f}: the primary task always has weight 1"));
        }
        s.used.insert("lambda".into());
        0.0
    } else {
        s.required("lambda").unwrap_or(0.0)
    };
    let kind = s.or("kind", HeadKind::MlpCe);
    let t = TaskConfig {
        task_name,
        label_source,
        lambda,
        kind,
        margin: s.or("margin", default_margin()),
        scale: s.or("scale", default_scale()),
        hidden_dim: s.or("hidden_dim", default_hidden()),
        shuffle: s.or("shuffle", false),
    };
    s.finish();
    Some(t)
}

fn parse_mtl(v: Option<&Value>, errs: &mut Vec<String>) -> MultiTaskConfig {
    let mut s = Section::of(v, "mtl", errs);
    let primary_v = s.raw("primary");
    let tasks_v = s.raw("tasks");
    let age_bins = s.or("age_bins", 10usize);
    let nationality_min_count = s.or("nationality_min_count", 2usize);
    s.finish();
    let primary = parse_task(primary_v.as_ref(), "mtl.primary", Some("speaker"), true, errs)
        .expect("primary always parses");
    let mut tasks = Vec::new();
    match tasks_v {
        None | Some(Value::Null) => {}
        Some(Value::Array(items)) => {
            for (i, t) in items.iter().enumerate() {
                if let Some(t) = parse_task(Some(t), &format!("mtl.tasks[{i}]"), None, false, errs) {
                    tasks.push(t);
                }
            }
        }
        Some(_) => errs.push("mtl.tasks must be an array".into()),
    }
    MultiTaskConfig { primary, tasks, age_bins, nationality_min_count }
}

fn parse_model(v: Option<&Value>, errs: &mut Vec<String>) -> ExtractorConfig {
    let d = ExtractorConfig::xvector();
    let mut s = Section::of(v, "model", errs);
    let m = ExtractorConfig {
        input_dim: s.or("input_dim", d.input_dim),
        frame_layers: s.or::<Vec<FrameLayerConfig>>("frame_layers", d.frame_layers),
        embedding_dim: s.or("embedding_dim", d.embedding_dim),
        leaky_slope: s.or("leaky_slope", d.leaky_slope),
    };
    s.finish();
    if let Err(mtlspk::Error::Config(e)) = m.validate() {
        errs.extend(e);
    }
    m
}

fn parse_train(v: Option<&Value>, mtl: MultiTaskConfig, errs: &mut Vec<String>) -> TrainConfig {
    let d = TrainConfig::new(mtl);
    let mut s = Section::of(v, "train", errs);
    let t = TrainConfig {
        iterations: s.or("iterations", d.iterations),
        batch_size: s.or("batch_size", d.batch_size),
        chunk_frames: s.or("chunk_frames", d.chunk_frames),
        lr: s.or("lr", d.lr),
        momentum: s.or("momentum", d.momentum),
        seed: s.or("seed", d.seed),
        validation_every: s.or("validation_every", d.validation_every),
        grad_clip: s.take("grad_clip"),
        mtl: d.mtl,
    };
    s.finish();
    t
}

fn parse_finetune(v: Option<&Value>, errs: &mut Vec<String>) -> FineTuneConfig {
    let d = FineTuneConfig::default();
    let mut s = Section::of(v, "finetune", errs);
    let mode = match s.take::<String>("mode") {
        Some(m) => m.parse::<FineTuneMode>().unwrap_or_else(|e| {
            s.errs.push(format!("finetune.mode: {e}"));
            d.mode
        }),
        None => d.mode,
    };
    let label_set = match s.take::<String>("label_set") {
        Some(m) => m.parse::<LabelSet>().unwrap_or_else(|e| {
            s.errs.push(format!("finetune.label_set: {e}"));
            d.label_set
        }),
        None => d.label_set,
    };
    let f = FineTuneConfig {
        mode,
        total_iterations: s.or("total_iterations", d.total_iterations),
        freeze_iterations: s.or("freeze_iterations", d.freeze_iterations),
        label_set,
        lr: s.take("lr"),
        momentum: s.take("momentum"),
        batch_size: s.take("batch_size"),
        chunk_frames: s.take("chunk_frames"),
        lambda_age: s.or("lambda_age", d.lambda_age),
    };
    s.finish();
    errs.extend(f.validate());
    f
}

fn parse_data(v: Option<&Value>, base: &Path, errs: &mut Vec<String>) -> DataPaths {
    let mut s = Section::of(v, "data", errs);
    let mut path = |k: &str| s.take::<PathBuf>(k).map(|p| if p.is_absolute() { p } else { base.join(p) });
    let d = DataPaths {
        train_manifest: path("train_manifest"),
        valid_manifest: path("valid_manifest"),
        checkpoint: path("checkpoint"),
    };
    s.finish();
    d
}

impl RunConfig {
    /// Parses a configuration document; relative data paths resolve against
    /// `base`.
    pub fn from_value(v: &Value, base: &Path) -> CliResult<Self> {
        let mut errs = Vec::new();
        if !v.is_object() {
            return Err(CliError::config("the configuration must be a JSON object"));
        }
        let mut scratch = Vec::new();
        let mut root = Section::of(Some(v), "", &mut scratch);
        let mode_v = root.raw("mode");
        let model_v = root.raw("model");
        let mtl_v = root.raw("mtl");
        let train_v = root.raw("train");
        let ft_v = root.raw("finetune");
        let data_v = root.raw("data");
        let frontend_v = root.raw("frontend");
        let diarize_v = root.raw("diarize");
        let unknown: Vec<String> = root.obj.keys().filter(|k| !root.used.contains(*k)).cloned().collect();
        for k in unknown {
            errs.push(format!("{k} is not a recognised section"));
        }
        let mode = match mode_v.as_ref().and_then(Value::as_str) {
            Some("train") => RunMode::Train,
            Some("finetune") => RunMode::Finetune,
            Some(other) => {
                errs.push(format!("mode must be \"train\" or \"finetune\", got {other:?}"));
                RunMode::Train
            }
            None => {
                errs.push("mode is required (\"train\" or \"finetune\")".into());
                RunMode::Train
            }
        };
        let model = parse_model(model_v.as_ref(), &mut errs);
        let mtl = parse_mtl(mtl_v.as_ref(), &mut errs);
        let train = parse_train(train_v.as_ref(), mtl, &mut errs);
        errs.extend(train.validate(&model));
        let finetune = match (mode, ft_v.as_ref()) {
            (RunMode::Finetune, v) => Some(parse_finetune(v, &mut errs)),
            (RunMode::Train, Some(v)) if !v.is_null() => {
                // still checked so a later finetune run does not surprise
                Some(parse_finetune(Some(v), &mut errs))
            }
            _ => None,
        };
        let data = parse_data(data_v.as_ref(), base, &mut errs);
        match mode {
            RunMode::Train if data.train_manifest.is_none() => errs.push("data.train_manifest is required".into()),
            RunMode::Finetune => {
                if data.train_manifest.is_none() {
                    errs.push("data.train_manifest (the fine-tuning target set) is required".into());
                }
            }
            _ => {}
        }
        let frontend = match frontend_v {
            None | Some(Value::Null) => MfccConfig::default(),
            Some(v) => serde_json::from_value(v).unwrap_or_else(|e| {
                errs.push(format!("frontend: {e}"));
                MfccConfig::default()
            }),
        };
        let diarize = match diarize_v {
            None | Some(Value::Null) => DiarizeConfig::default(),
            Some(v) => serde_json::from_value(v).unwrap_or_else(|e| {
                errs.push(format!("diarize: {e}"));
                DiarizeConfig::default()
            }),
        };
        if !errs.is_empty() {
            return Err(CliError::Config(errs));
        }
        Ok(Self { mode, model, train, finetune, data, frontend, diarize })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{} is not valid JSON: {e}", path.display())))?;
        Self::from_value(&v, path.parent().unwrap_or(Path::new(".")))
    }
}

/// Reads one section of a configuration file without validating the rest,
/// for commands that only need e.g. `frontend` or `diarize`.
pub fn load_section<T: DeserializeOwned + Default>(path: Option<&Path>, key: &str) -> CliResult<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{} is not valid JSON: {e}", path.display())))?;
    match v.get(key) {
        None | Some(Value::Null) => Ok(T::default()),
        Some(s) => serde_json::from_value(s.clone()).map_err(|e| CliError::config(format!("{key}: {e}"))),
    }
}
