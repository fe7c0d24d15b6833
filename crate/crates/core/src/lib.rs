//! Semi-supervised classification with learned feature-based refinement and
//! augmentation.
//!
//! The model is an encoder `Enc`, a feature augmentation module `AugF` that
//! attends over class prototypes, and a softmax classifier `Clf`. Training
//! combines a supervised loss with two consistency losses driven by
//! pseudo-labels from a weakly augmented view.

pub mod augf;
pub mod checkpoint;
pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod kmeans;
pub mod losses;
pub mod model;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod prototype;
pub mod scalar;
pub mod schedule;
pub mod seeds;
pub mod trainer;

pub use augf::AugF;
pub use augment::{AugOp, AugPolicy, WeakConfig};
pub use data::{DataKind, Dataset, ImageShape, LabeledSet, UnlabeledSet};
pub use error::{Error, Result};
pub use losses::LossWeights;
pub use model::{Model, ModelSpec};
pub use objective::{LossGraph, LossSwitches};
pub use prototype::{MemoryBank, PrototypeSet};
pub use scalar::Scalar;
pub use schedule::Schedule;
pub use trainer::{MetricsLog, MetricsRow, PrototypeInterval, TrainConfig, Trainer};

pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
pub type Trainer64 = Trainer<f64>;
pub type Trainer32 = Trainer<f32>;
pub type PrototypeSet64 = PrototypeSet<f64>;
pub type Dataset64 = Dataset<f64>;
