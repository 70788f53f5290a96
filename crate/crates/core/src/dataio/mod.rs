//! Manifests, label vocabularies, splits, and the FEAT1 feature format.

mod features;
mod import;
mod labels;
mod manifest;
mod split;

pub use features::{decode_feat1, encode_feat1, read_features, write_features, FeatureMatrix, FEAT1_MAGIC};
pub use import::{apply_attributes, read_attribute_csv, AttributeTable, ATTRIBUTE_COLUMNS};
pub use labels::{
    bin_age, build_gender_vocab, build_nationality_vocab, make_age_binner, shuffle_labels, AgeBinner,
    LabelVocab, UNK_LABEL,
};
pub use manifest::{load_manifest, save_manifest, Attributes, Manifest, UtteranceRecord};
pub use split::{
    age_histogram, normalized_l1, split_report, split_train_test, SplitReport, TRAIN_FRACTION_TOLERANCE,
};
