//! Multi-task speaker embedding toolkit: data preparation, MFCC frontend,
//! x-vector style extractor with classification heads, SGD training and
//! fine-tuning, plus verification (EER) and diarization (DER) evaluation.

pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod frontend;
pub mod losses;
pub mod model;
pub mod real;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use real::Real;
