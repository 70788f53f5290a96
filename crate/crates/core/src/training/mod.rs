//! SGD training, validation, checkpoint selection, and two-stage
//! fine-tuning.

mod corpus;
mod finetune;
mod sgd;
mod train;

pub use corpus::{holdout_validation, sample_batch, wrap_chunk, LabeledCorpus, Vocabularies};
pub use finetune::{finetune, finetune_corpus, FineTuneConfig, FineTuneMode, FineTuneOutcome, LabelSet};
pub use sgd::{clip_grad_norm, sgd_step, TrainableMask};
pub use train::{
    evaluate_corpus, train, train_corpus, BestRecord, LogEntry, TrainConfig, TrainOutcome, TrainState,
    TrainStatus, HOLDOUT_FRACTION,
};

#[cfg(test)]
mod tests;
