//! Adaptive logit adjustment for long-tailed classification.
//!
//! The crate bundles a synthetic long-tailed data generator ([`data`]), a
//! cosine classifier with analytic gradients ([`model`]), the loss family
//! ([`losses`]): plain CE, generic logit adjustment, the quantity and
//! difficulty factors and their product (ALA), plus LDAM-style and focal
//! baselines. [`train`] and [`metrics`] run and score experiments, and
//! [`cli`] drives them from the `longtail-lab` binary.

pub mod cli;
pub mod data;
pub mod error;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod train;

pub use data::{
    class_counts, generate, partition_by_count, ConfuserPair, Dataset, LongTailSpec, ShotThresholds, Spread,
    Subset, SubsetPartition,
};
pub use error::{Error, Result};
pub use losses::{
    ala_adjust, ala_loss, ce_loss, difficulty_factor, focal_loss, la_loss, ldam_adjust, quantity_factor,
    AdjustingTerm, LossKind, LossSpec, LossValue,
};
pub use metrics::{report, MetricsReport};
pub use model::{CosineClassifier, ModelDims};
pub use train::{evaluate, train, Prediction, TraceLog, TrainConfig};
