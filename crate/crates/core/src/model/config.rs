use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameLayerConfig {
    /// Frame offsets spliced together, sorted ascending.
    pub context: Vec<i32>,
    pub dim: usize,
}

impl FrameLayerConfig {
    pub fn new(context: impl Into<Vec<i32>>, dim: usize) -> Self {
        Self {
            context: context.into(),
            dim,
        }
    }

    /// Frames consumed by the context window minus one.
    pub fn span(&self) -> usize {
        match (self.context.first(), self.context.last()) {
            (Some(a), Some(b)) => (b - a) as usize,
            _ => 0,
        }
    }
}

/// TDNN frame layers, mean+std statistics pooling, and one affine embedding
/// layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorConfig {
    pub input_dim: usize,
    pub frame_layers: Vec<FrameLayerConfig>,
    pub embedding_dim: usize,
    pub leaky_slope: f64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self::xvector()
    }
}

impl ExtractorConfig {
    /// The standard x-vector frame stack with a 256-unit embedding.
    pub fn xvector() -> Self {
        Self {
            input_dim: 30,
            frame_layers: vec![
                FrameLayerConfig::new([-2, -1, 0, 1, 2], 512),
                FrameLayerConfig::new([-2, 0, 2], 512),
                FrameLayerConfig::new([-3, 0, 3], 512),
                FrameLayerConfig::new([0], 512),
                FrameLayerConfig::new([0], 1500),
            ],
            embedding_dim: 256,
            leaky_slope: 0.01,
        }
    }

    /// Same topology at toy widths.
    pub fn tiny(input_dim: usize, hidden: usize, embedding_dim: usize) -> Self {
        let mut c = Self::xvector();
        c.input_dim = input_dim;
        for l in &mut c.frame_layers {
            l.dim = hidden;
        }
        c.embedding_dim = embedding_dim;
        c
    }

    /// Shortest input the frame stack accepts.
    pub fn min_frames(&self) -> usize {
        self.frame_layers.iter().map(FrameLayerConfig::span).sum::<usize>() + 1
    }

    pub fn pooled_dim(&self) -> usize {
        2 * self.frame_layers.last().map_or(self.input_dim, |l| l.dim)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.input_dim == 0 {
            errs.push("model.input_dim must be positive".to_string());
        }
        if self.embedding_dim == 0 {
            errs.push("model.embedding_dim must be positive".to_string());
        }
        if self.frame_layers.is_empty() {
            errs.push("model.frame_layers must not be empty".to_string());
        }
        for (i, l) in self.frame_layers.iter().enumerate() {
            if l.dim == 0 {
                errs.push(format!("model.frame_layers[{i}].dim must be positive"));
            }
            if l.context.is_empty() || !l.context.windows(2).all(|w| w[0] < w[1]) {
                errs.push(format!(
                    "model.frame_layers[{i}].context must be non-empty and strictly increasing"
                ));
            }
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            errs.push("model.leaky_slope must lie in [0, 1)".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    /// Two hidden layers then a projection, trained with cross-entropy.
    #[serde(rename = "mlp_ce")]
    MlpCe,
    /// Single normalised weight matrix with an additive cosine margin.
    #[serde(rename = "cosface")]
    CosFace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskHeadSpec {
    pub task_name: String,
    pub kind: HeadKind,
    pub n_classes: usize,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
}

pub fn default_margin() -> f64 {
    0.2
}

pub fn default_scale() -> f64 {
    30.0
}

pub fn default_hidden() -> usize {
    256
}

impl TaskHeadSpec {
    pub fn mlp(task: impl Into<String>, n_classes: usize, hidden_dim: usize) -> Self {
        Self {
            task_name: task.into(),
            kind: HeadKind::MlpCe,
            n_classes,
            margin: default_margin(),
            scale: default_scale(),
            hidden_dim,
        }
    }

    pub fn cosface(task: impl Into<String>, n_classes: usize, margin: f64, scale: f64) -> Self {
        Self {
            task_name: task.into(),
            kind: HeadKind::CosFace,
            n_classes,
            margin,
            scale,
            hidden_dim: default_hidden(),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.n_classes < 2 {
            return Err(format!(
                "head {:?} needs at least 2 classes, got {}",
                self.task_name, self.n_classes
            ));
        }
        if !(self.margin >= 0.0) {
            return Err(format!("head {:?}: margin must be >= 0", self.task_name));
        }
        if !(self.scale > 0.0) {
            return Err(format!("head {:?}: scale must be > 0", self.task_name));
        }
        if self.kind == HeadKind::MlpCe && self.hidden_dim == 0 {
            return Err(format!("head {:?}: hidden_dim must be positive", self.task_name));
        }
        Ok(())
    }
}

/// Extractor plus its task heads; head 0 is the primary task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub extractor: ExtractorConfig,
    pub heads: Vec<TaskHeadSpec>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = match self.extractor.validate() {
            Ok(()) => Vec::new(),
            Err(Error::Config(e)) => e,
            Err(e) => vec![e.to_string()],
        };
        if self.heads.is_empty() {
            errs.push("model needs at least one head".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for h in &self.heads {
            if let Err(e) = h.validate() {
                errs.push(e);
            }
            if !names.insert(h.task_name.as_str()) {
                errs.push(format!("duplicate head name {:?}", h.task_name));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xvector_shape() {
        let c = ExtractorConfig::xvector();
        assert_eq!(c.min_frames(), 15);
        assert_eq!(c.pooled_dim(), 3000);
        assert_eq!(c.embedding_dim, 256);
        c.validate().unwrap();
    }

    #[test]
    fn head_validation() {
        assert!(TaskHeadSpec::mlp("a", 1, 8).validate().is_err());
        assert!(TaskHeadSpec::cosface("a", 3, -0.1, 30.0).validate().is_err());
        assert!(TaskHeadSpec::cosface("a", 3, 0.2, 0.0).validate().is_err());
        assert!(TaskHeadSpec::cosface("a", 3, 0.2, 30.0).validate().is_ok());
    }
}
