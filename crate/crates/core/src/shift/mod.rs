//! Distribution-shift tooling: cross-modal match estimation, shifted test
//! splits, dataset mixtures and a synthetic generator.

pub mod classifier;
pub mod mix;
pub mod ood;
pub mod synthetic;

use thiserror::Error;

use crate::dataset::DataError;

#[derive(Debug, Error)]
pub enum ShiftError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("need at least two distinct modalities, have {0}")]
    Modalities(usize),
    #[error("need at least 10 items to train the match classifier, have {0}")]
    TooFewItems(usize),
    #[error("non-finite feature value")]
    NonFinite,
    #[error("feature vector has the wrong dimension")]
    Dimension,
    #[error("filtered test split is empty")]
    EmptyTest,
    #[error("fraction must be in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
}

pub use classifier::{train_match_classifier, ClassifierConfig, MatchClassifier};
pub use mix::{mix_datasets, mix_features};
pub use ood::{build_ood_split, build_ood_split_from_probs, OodMode};
pub use synthetic::{gen_synthetic, SyntheticData, SyntheticSpec};
