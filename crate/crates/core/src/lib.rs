//! Modality-decorrelating stable learning for multimodal recommendation.
//!
//! The math is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix it to `f64`, which is what the command-line tool uses.

// `!(x > 0.0)` is used on purpose in validation so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod features;
pub mod hsic;
pub mod mask;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod shift;
pub mod trainer;
pub mod weights;

pub use backbone::{BackboneParams, ModelKind, SharedFeatures};
pub use config::TrainConfig;
pub use dataset::{InteractionDataset, SplitRatios, SplitTag, TrainTriple};
pub use eval::{ExcludeMode, MetricsReport};
pub use features::FeatureStore;
pub use hsic::HsicMode;
pub use mask::TaskMask;
pub use scalar::Scalar;
pub use trainer::{FitResult, Trainer};
pub use weights::SampleWeights;

pub type Params = BackboneParams<f64>;
pub type Features = FeatureStore<f64>;
pub type Weights = SampleWeights<f64>;
pub type Mask = TaskMask<f64>;
