//! Embedding extractor and task heads.

mod checkpoint;
mod config;
mod layers;
mod net;
mod params;

pub use checkpoint::Checkpoint;
pub use config::{
    default_hidden, default_margin, default_scale, ExtractorConfig, FrameLayerConfig, HeadKind,
    ModelConfig, TaskHeadSpec,
};
pub use layers::{cosface_logits, cosine_matrix, mlp_head_forward, stats_pool, NORM_FLOOR, VARIANCE_FLOOR};
pub use net::{Embedding, SpeakerNet};
pub use params::{Gradients, ModelParams, Param, ParamKind, EXTRACTOR, LAST_LINEAR};

pub(crate) use net::HeadCache;

#[cfg(test)]
mod tests;
